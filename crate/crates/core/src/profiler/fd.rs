//! Pairwise functional-dependency mining with TANE's stripped-partition
//! primitive, and the cardinality classification derived from
//! bidirectional FD tests.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dbcore::{canonical, CanonicalCell, Value};

/// Mapping relationship between two columns, derived from FD flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cardinality {
    OneToOne,
    NToOne,
    OneToN,
    NToM,
    /// FD flags were not evaluated (e.g. cross-table pairs).
    Unknown,
}

/// Equivalence classes of row indices sharing a value, with singleton
/// classes removed — TANE's stripped partition.
pub(crate) fn stripped_partition(values: &[CanonicalCell]) -> Vec<Vec<usize>> {
    let mut classes: HashMap<&CanonicalCell, Vec<usize>> = HashMap::new();
    for (i, v) in values.iter().enumerate() {
        classes.entry(v).or_default().push(i);
    }
    let mut stripped: Vec<Vec<usize>> =
        classes.into_values().filter(|c| c.len() > 1).collect();
    // Deterministic order for downstream iteration.
    stripped.sort_by_key(|c| c[0]);
    stripped
}

/// Does a → b hold over the given row-aligned value pairs?
///
/// π_a refines π_{(a,b)} exactly when every stripped class of a carries a
/// single b-value; singleton classes hold trivially. Rows with a null in
/// either column are excluded.
pub fn pairwise_fd(pairs: &[(Value, Value)]) -> bool {
    pairwise_fd_bidirectional(pairs).0
}

/// Both FD directions from one canonicalization pass.
pub fn pairwise_fd_bidirectional(pairs: &[(Value, Value)]) -> (bool, bool) {
    let (a, b): (Vec<CanonicalCell>, Vec<CanonicalCell>) = pairs
        .iter()
        .filter(|(x, y)| !x.is_null() && !y.is_null())
        .map(|(x, y)| (canonical(x), canonical(y)))
        .unzip();
    (refines(&a, &b), refines(&b, &a))
}

/// Every stripped class of `a` carries a single `b`-value.
fn refines(a: &[CanonicalCell], b: &[CanonicalCell]) -> bool {
    for class in stripped_partition(a) {
        let first = &b[class[0]];
        if class.iter().skip(1).any(|&i| &b[i] != first) {
            return false;
        }
    }
    true
}

/// §-mapping from FD flags to cardinality: a → b and b → a give 1:1;
/// a → b alone gives N:1; b → a alone gives 1:N; neither gives N:M.
pub fn classify_cardinality(fd_ab: bool, fd_ba: bool) -> Cardinality {
    match (fd_ab, fd_ba) {
        (true, true) => Cardinality::OneToOne,
        (true, false) => Cardinality::NToOne,
        (false, true) => Cardinality::OneToN,
        (false, false) => Cardinality::NToM,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Value {
        Value::Text(s.to_string())
    }

    fn pairs(rows: &[(&str, &str)]) -> Vec<(Value, Value)> {
        rows.iter().map(|(a, b)| (t(a), t(b))).collect()
    }

    #[test]
    fn zip_city_example() {
        let zip_city = pairs(&[
            ("02139", "Cambridge"),
            ("02139", "Cambridge"),
            ("10001", "NYC"),
        ]);
        assert!(pairwise_fd(&zip_city));
        let city_zip: Vec<(Value, Value)> =
            zip_city.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        assert!(pairwise_fd(&city_zip));

        // A second zip for Cambridge breaks city → zip but not zip → city.
        let extended = pairs(&[
            ("02139", "Cambridge"),
            ("02139", "Cambridge"),
            ("10001", "NYC"),
            ("02140", "Cambridge"),
        ]);
        assert!(pairwise_fd(&extended));
        let reversed: Vec<(Value, Value)> =
            extended.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        assert!(!pairwise_fd(&reversed));
    }

    #[test]
    fn reflexivity_and_unique_keys() {
        let self_pairs = pairs(&[("x", "x"), ("y", "y"), ("x", "x")]);
        assert!(pairwise_fd(&self_pairs));

        // Unique a-values: all partitions singleton, FD holds vacuously.
        let unique = pairs(&[("1", "q"), ("2", "q"), ("3", "r")]);
        assert!(pairwise_fd(&unique));
    }

    #[test]
    fn null_rows_are_excluded() {
        let with_nulls = vec![
            (t("a"), Value::Null),
            (t("a"), t("1")),
            (t("a"), t("1")),
        ];
        // The null row does not count as a violating second b-value.
        assert!(pairwise_fd(&with_nulls));
    }

    #[test]
    fn numeric_coercion_in_fd_keys() {
        // 1 (integer) and 1.0 (real) are the same a-value; differing
        // b-values must therefore violate the FD.
        let mixed = vec![
            (Value::Integer(1), t("x")),
            (Value::Real(1.0), t("y")),
        ];
        assert!(!pairwise_fd(&mixed));
    }

    #[test]
    fn cardinality_mapping() {
        assert_eq!(classify_cardinality(true, true), Cardinality::OneToOne);
        assert_eq!(classify_cardinality(true, false), Cardinality::NToOne);
        assert_eq!(classify_cardinality(false, true), Cardinality::OneToN);
        assert_eq!(classify_cardinality(false, false), Cardinality::NToM);
    }

    #[test]
    fn cardinality_swap_symmetry() {
        for fd_ab in [false, true] {
            for fd_ba in [false, true] {
                let forward = classify_cardinality(fd_ab, fd_ba);
                let backward = classify_cardinality(fd_ba, fd_ab);
                let expected = match forward {
                    Cardinality::NToOne => Cardinality::OneToN,
                    Cardinality::OneToN => Cardinality::NToOne,
                    other => other,
                };
                assert_eq!(backward, expected);
            }
        }
    }

    #[test]
    fn stripped_partition_drops_singletons() {
        let cells: Vec<CanonicalCell> =
            [t("a"), t("b"), t("a"), t("c"), t("a")].iter().map(canonical).collect();
        let partition = stripped_partition(&cells);
        assert_eq!(partition, vec![vec![0, 2, 4]]);
    }

    /// Brute-force oracle: group b-values by a-value, FD holds iff every
    /// group is a single value.
    fn oracle(pairs: &[(Value, Value)]) -> bool {
        use std::collections::HashSet;
        let mut groups: HashMap<CanonicalCell, HashSet<CanonicalCell>> = HashMap::new();
        for (a, b) in pairs {
            if a.is_null() || b.is_null() {
                continue;
            }
            groups.entry(canonical(a)).or_default().insert(canonical(b));
        }
        groups.values().all(|s| s.len() <= 1)
    }

    #[test]
    fn oracle_equivalence_on_random_tables() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n_cols = rng.gen_range(2..=8);
            let n_rows = rng.gen_range(1..=500);
            // Small value domains make both FD outcomes likely.
            let domains: Vec<u32> = (0..n_cols).map(|_| rng.gen_range(1..=6)).collect();
            let table: Vec<Vec<Value>> = (0..n_rows)
                .map(|_| {
                    (0..n_cols)
                        .map(|c| {
                            if rng.gen_bool(0.05) {
                                Value::Null
                            } else {
                                Value::Integer(rng.gen_range(0..domains[c]) as i64)
                            }
                        })
                        .collect()
                })
                .collect();
            for a in 0..n_cols {
                for b in 0..n_cols {
                    let pairs: Vec<(Value, Value)> =
                        table.iter().map(|r| (r[a].clone(), r[b].clone())).collect();
                    assert_eq!(
                        pairwise_fd(&pairs),
                        oracle(&pairs),
                        "mismatch on columns {a}→{b}"
                    );
                }
            }
        }
    }
}
