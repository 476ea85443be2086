//! Value-pattern abstraction for non-numeric columns.
//!
//! Each character maps to a symbol class (uppercase → `A`, lowercase →
//! `a`, digit → `9`, everything else verbatim) and maximal runs of one
//! symbol collapse, so `"2026-01-01"` becomes `"9-9-9"` and `"Sharpie"`
//! becomes `"Aa"`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Abstracts one value into its pattern string.
pub fn abstract_pattern(value: &str) -> String {
    let mut out = String::new();
    let mut last: Option<char> = None;
    for ch in value.chars() {
        let symbol = if ch.is_uppercase() {
            'A'
        } else if ch.is_lowercase() {
            'a'
        } else if ch.is_numeric() {
            '9'
        } else {
            ch
        };
        if last != Some(symbol) {
            out.push(symbol);
            last = Some(symbol);
        }
    }
    out
}

/// Samples up to `cap` values (seeded, reproducible), groups them by
/// pattern, and returns (pattern, frequency) sorted by descending
/// frequency, ties broken by ascending pattern text.
pub fn mine_patterns(values: &[String], cap: usize, seed: u64) -> Vec<(String, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<&String> = if values.len() <= cap {
        values.iter().collect()
    } else {
        values.choose_multiple(&mut rng, cap).collect()
    };

    let mut counts: std::collections::HashMap<String, u64> = std::collections::HashMap::new();
    for value in sample {
        *counts.entry(abstract_pattern(value)).or_insert(0) += 1;
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_examples() {
        assert_eq!(abstract_pattern("Sharpie"), "Aa");
        assert_eq!(abstract_pattern("2026-01-01"), "9-9-9");
        assert_eq!(abstract_pattern(""), "");
        assert_eq!(abstract_pattern("Aa9"), "Aa9");
        assert_eq!(abstract_pattern("ABC-123"), "A-9");
        assert_eq!(abstract_pattern("  x "), " a ");
    }

    #[test]
    fn punctuation_runs_collapse_too() {
        assert_eq!(abstract_pattern("a--b"), "a-a");
        assert_eq!(abstract_pattern("..."), ".");
    }

    #[test]
    fn idempotent_on_own_alphabet() {
        // On the {A,a,9} alphabet, re-abstracting is the identity.
        for v in ["Aa9", "A9a", "a", "9", "Aa9Aa9"] {
            let once = abstract_pattern(v);
            assert_eq!(abstract_pattern(&once), once);
        }
    }

    #[test]
    fn mining_groups_and_ranks() {
        let values: Vec<String> =
            ["A1", "B2", "xx"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            mine_patterns(&values, 200, 42),
            vec![("A9".to_string(), 2), ("a".to_string(), 1)]
        );
    }

    #[test]
    fn mining_caps_sample_size() {
        let values: Vec<String> = vec!["same".to_string(); 300];
        let mined = mine_patterns(&values, 200, 42);
        assert_eq!(mined, vec![("a".to_string(), 200)]);
    }

    #[test]
    fn mining_empty_input() {
        assert!(mine_patterns(&[], 200, 42).is_empty());
    }

    #[test]
    fn mining_is_deterministic_for_a_seed() {
        let values: Vec<String> = (0..1000)
            .map(|i| if i % 3 == 0 { format!("U{i}") } else { format!("v{i}") })
            .collect();
        let a = mine_patterns(&values, 200, 42);
        let b = mine_patterns(&values, 200, 42);
        assert_eq!(a, b);
        let frequency_sum: u64 = a.iter().map(|(_, n)| n).sum();
        assert_eq!(frequency_sum, 200);
    }
}
