//! BM25 Okapi retrieval of question-relevant cell values.
//!
//! Every column owns an independent corpus: each distinct non-null value
//! of that column is one document. Scoring a question against a column
//! therefore uses that column's document count, document frequencies and
//! average document length.

use std::collections::{BTreeMap, HashMap};

use crate::dbcore::ColumnRef;
use crate::util::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone)]
struct Doc {
    value: String,
    tf: HashMap<String, u32>,
    len: usize,
}

#[derive(Debug, Clone, Default)]
struct ColumnCorpus {
    docs: Vec<Doc>,
    df: HashMap<String, u32>,
    total_len: usize,
}

impl ColumnCorpus {
    fn push(&mut self, value: String) {
        let tokens = tokenize(&value);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        for term in tf.keys() {
            *self.df.entry(term.clone()).or_insert(0) += 1;
        }
        self.total_len += tokens.len();
        self.docs.push(Doc { value, tf, len: tokens.len() });
    }

    fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    /// BM25 Okapi score of one document against the query tokens.
    fn score(&self, doc: &Doc, query: &[String]) -> f64 {
        let n = self.docs.len() as f64;
        let avgdl = self.avgdl().max(f64::MIN_POSITIVE);
        let mut score = 0.0;
        for term in query {
            let Some(tf) = doc.tf.get(term).copied() else { continue };
            let df = self.df.get(term).copied().unwrap_or(0) as f64;
            // IDF: ln((N - df + 0.5) / (df + 0.5) + 1)
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let tf = tf as f64;
            let dl = doc.len as f64;
            let tf_norm =
                (tf * (BM25_K1 + 1.0)) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
            score += idf * tf_norm;
        }
        score
    }
}

/// Inverted value index over all indexed columns of one database.
#[derive(Debug, Clone, Default)]
pub struct ValueIndex {
    columns: BTreeMap<ColumnRef, ColumnCorpus>,
}

impl ValueIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers one column's distinct values (already deduplicated and
    /// cap-limited by the caller).
    pub fn insert_column(&mut self, column: ColumnRef, values: Vec<String>) {
        let corpus = self.columns.entry(column).or_default();
        for v in values {
            corpus.push(v);
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = &ColumnRef> {
        self.columns.keys()
    }

    pub fn document_count(&self, column: &ColumnRef) -> usize {
        self.columns.get(column).map(|c| c.docs.len()).unwrap_or(0)
    }

    /// Scores every document of `column` against the question and returns
    /// (value, score) sorted by descending score, ties by ascending value.
    pub fn scored_examples(&self, column: &ColumnRef, question: &str) -> Vec<(String, f64)> {
        let Some(corpus) = self.columns.get(column) else { return Vec::new() };
        let query = tokenize(question);
        let mut scored: Vec<(String, f64)> = corpus
            .docs
            .iter()
            .map(|d| (d.value.clone(), corpus.score(d, &query)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored
    }
}

/// Top-k question-relevant values per indexed column.
pub fn retrieve_examples(
    index: &ValueIndex,
    question: &str,
    k: usize,
) -> BTreeMap<ColumnRef, Vec<String>> {
    let mut out = BTreeMap::new();
    for column in index.columns() {
        let values: Vec<String> = index
            .scored_examples(column, question)
            .into_iter()
            .take(k)
            .map(|(v, _)| v)
            .collect();
        out.insert(column.clone(), values);
    }
    out
}

/// BM25 scores of a small ad-hoc corpus against a query, used for
/// skeleton ranking. Same formula as the value index.
pub fn bm25_scores(docs: &[Vec<String>], query: &[String]) -> Vec<f64> {
    let n = docs.len() as f64;
    if docs.is_empty() {
        return Vec::new();
    }
    let mut df: HashMap<&String, u32> = HashMap::new();
    for doc in docs {
        let mut seen: Vec<&String> = doc.iter().collect();
        seen.sort();
        seen.dedup();
        for term in seen {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let avgdl =
        (docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n).max(f64::MIN_POSITIVE);
    docs.iter()
        .map(|doc| {
            let dl = doc.len() as f64;
            let mut score = 0.0;
            for term in query {
                let tf = doc.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let dfq = df.get(term).copied().unwrap_or(0) as f64;
                let idf = ((n - dfq + 0.5) / (dfq + 0.5) + 1.0).ln();
                let tf_norm = (tf * (BM25_K1 + 1.0))
                    / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
                score += idf * tf_norm;
            }
            score
        })
        .collect()
}
