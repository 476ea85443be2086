//! Semantically similar column discovery and probe-based verification.
//!
//! A pluggable [`Embedder`] produces vectors for "table column
//! description" texts; the deterministic fallback hashes character
//! trigrams. Candidate pairs above the cosine threshold are then
//! verified with two set-difference probes: only a pair whose value sets
//! are provably identical in both directions is marked Duplicate.

use std::time::Duration;

use crate::dbcore::{ColumnRef, DatabaseHandle, ExecState};
use crate::util::quote_ident;

use super::{ColumnProfile, InterColumnRelation, RelationKind};
use super::fd::Cardinality;

/// Any vector producer over column texts. Implementations must be
/// deterministic for reproducible profiles.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Deterministic fallback embedder: character trigrams of the lowercased
/// text hashed into a fixed number of buckets.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self { dim: 512 }
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(8) }
    }
}

impl Embedder for TrigramEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut v = vec![0.0; self.dim];
        if chars.len() < 3 {
            // Degenerate text still gets a stable non-zero vector.
            if !chars.is_empty() {
                v[fnv1a(&chars) % self.dim] += 1.0;
            }
            return v;
        }
        for window in chars.windows(3) {
            v[fnv1a(window) % self.dim] += 1.0;
        }
        v
    }
}

fn fnv1a(chars: &[char]) -> usize {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &c in chars {
        for byte in (c as u32).to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash as usize
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn column_text(profile: &ColumnProfile) -> String {
    match &profile.description {
        Some(d) => format!("{} {} {}", profile.table, profile.column, d),
        None => format!("{} {}", profile.table, profile.column),
    }
}

/// All cross-table column pairs whose embedded texts reach the cosine
/// threshold, canonically ordered, deterministic.
pub fn similarity_candidates(
    profiles: &[ColumnProfile],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Vec<(ColumnRef, ColumnRef)> {
    let embedded: Vec<(ColumnRef, Vec<f64>)> = profiles
        .iter()
        .map(|p| (ColumnRef::new(p.table.clone(), p.column.clone()), embedder.embed(&column_text(p))))
        .collect();

    let mut pairs = Vec::new();
    for i in 0..embedded.len() {
        for j in (i + 1)..embedded.len() {
            let (ref ca, ref va) = embedded[i];
            let (ref cb, ref vb) = embedded[j];
            if ca.table.eq_ignore_ascii_case(&cb.table) {
                continue; // same-table relations come from FD mining
            }
            if cosine(va, vb) >= threshold {
                let (first, second) =
                    if ca <= cb { (ca.clone(), cb.clone()) } else { (cb.clone(), ca.clone()) };
                pairs.push((first, second));
            }
        }
    }
    pairs.sort();
    pairs.dedup();
    pairs
}

/// Probe timeout: verification must never stall profiling.
const PROBE_TIMEOUT: Duration = Duration::from_secs(30);

/// Classify a candidate pair by two set-difference probes (`a EXCEPT b`,
/// `b EXCEPT a` over non-null values). Both empty ⇒ Duplicate; any
/// difference ⇒ Similar; any probe failure ⇒ Similar with a note —
/// Duplicate is never assigned without proof.
pub fn verify_column_relation(
    db: &DatabaseHandle,
    pair: (ColumnRef, ColumnRef),
    join_path: Option<String>,
) -> InterColumnRelation {
    let (a, b) = pair;
    let mut relation = InterColumnRelation {
        a: a.clone(),
        b: b.clone(),
        kind: RelationKind::Similar,
        join_path,
        fd_ab: None,
        fd_ba: None,
        cardinality: Cardinality::Unknown,
        note: None,
    };

    match (difference_empty(db, &a, &b), difference_empty(db, &b, &a)) {
        (Ok(true), Ok(true)) => relation.kind = RelationKind::Duplicate,
        (Ok(_), Ok(_)) => {}
        (Err(e), _) | (_, Err(e)) => {
            relation.note = Some(format!("verification failed: {e}"));
        }
    }
    relation
}

/// Is `SELECT a EXCEPT SELECT b` empty?
fn difference_empty(
    db: &DatabaseHandle,
    a: &ColumnRef,
    b: &ColumnRef,
) -> Result<bool, String> {
    let sql = format!(
        "SELECT 1 FROM (SELECT {ca} FROM {ta} WHERE {ca} IS NOT NULL \
         EXCEPT SELECT {cb} FROM {tb} WHERE {cb} IS NOT NULL) LIMIT 1",
        ca = quote_ident(&a.column),
        ta = quote_ident(&a.table),
        cb = quote_ident(&b.column),
        tb = quote_ident(&b.table),
    );
    let outcome = db.execute(&sql, PROBE_TIMEOUT, 1);
    match outcome.state {
        ExecState::Empty => Ok(true),
        ExecState::Success | ExecState::NoneValued => Ok(false),
        ExecState::Failure => {
            Err(outcome.error_message.unwrap_or_else(|| "probe failed".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(table: &str, column: &str, description: Option<&str>) -> ColumnProfile {
        ColumnProfile {
            table: table.into(),
            column: column.into(),
            declared_type: "TEXT".into(),
            description: description.map(|s| s.to_string()),
            range: None,
            patterns: Vec::new(),
            null_count: 0,
            distinct_count: 0,
            size_bounds: None,
            sampled_examples: Vec::new(),
            is_numeric: false,
        }
    }

    #[test]
    fn display_name_pair_is_a_candidate() {
        let profiles = vec![
            profile("users", "DisplayName", Some("the user's display name")),
            profile("posts", "OwnerDisplayName", Some("display name of the post owner")),
            profile("posts", "Score", Some("vote score")),
        ];
        let embedder = TrigramEmbedder::default();
        let candidates = similarity_candidates(&profiles, &embedder, 0.4);
        assert!(candidates.contains(&(
            ColumnRef::new("posts", "OwnerDisplayName"),
            ColumnRef::new("users", "DisplayName"),
        )));
        // A column is never paired with itself and same-table pairs are out.
        assert!(candidates.iter().all(|(a, b)| a != b && a.table != b.table));
    }

    #[test]
    fn impossible_threshold_yields_nothing() {
        let profiles = vec![
            profile("users", "DisplayName", None),
            profile("posts", "OwnerDisplayName", None),
        ];
        let embedder = TrigramEmbedder::default();
        assert!(similarity_candidates(&profiles, &embedder, 1.01).is_empty());
    }

    #[test]
    fn cosine_properties() {
        let e = TrigramEmbedder::default();
        let v = e.embed("users DisplayName");
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
        let w = e.embed("entirely different words qqq");
        let c = cosine(&v, &w);
        assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn duplicate_requires_proof_both_ways() {
        use crate::dbcore::open_database;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.db");
        {
            let conn = rusqlite::Connection::open(&path).unwrap();
            conn.execute_batch(
                "CREATE TABLE t1 (x TEXT); CREATE TABLE t2 (y TEXT); CREATE TABLE t3 (z TEXT);
                 INSERT INTO t1 VALUES ('a'), ('b');
                 INSERT INTO t2 VALUES ('a'), ('b');
                 INSERT INTO t3 VALUES ('a'), ('b'), ('c');",
            )
            .unwrap();
        }
        let db = open_database(&path).unwrap();
        let dup = verify_column_relation(
            &db,
            (ColumnRef::new("t1", "x"), ColumnRef::new("t2", "y")),
            None,
        );
        assert_eq!(dup.kind, RelationKind::Duplicate);

        let sim = verify_column_relation(
            &db,
            (ColumnRef::new("t1", "x"), ColumnRef::new("t3", "z")),
            None,
        );
        assert_eq!(sim.kind, RelationKind::Similar);

        // Probe failure (missing table) degrades to Similar with a note.
        let failed = verify_column_relation(
            &db,
            (ColumnRef::new("t1", "x"), ColumnRef::new("nope", "z")),
            None,
        );
        assert_eq!(failed.kind, RelationKind::Similar);
        assert!(failed.note.is_some());
    }
}
