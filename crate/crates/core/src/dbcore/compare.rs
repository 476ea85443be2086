//! Result-set equivalence for the EX metric.
//!
//! Rows compare as unordered sets of tuples (the benchmark convention);
//! a strict multiset mode is available behind [`CompareMode`]. Cells are
//! quantized to a 1e-6 grid before comparison so that integer 1 equals
//! real 1.0 and the relation stays a true equivalence relation.

use std::collections::HashMap;

use super::{DbError, ResultSet, Value};

/// Quantization step: values equal after rounding to micro-units compare
/// equal.
const SCALE: f64 = 1e6;
/// Above this magnitude the micro-unit grid no longer fits in i128;
/// such reals fall back to exact bit comparison.
const GRID_LIMIT: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompareMode {
    /// Unordered set of row tuples, duplicates collapsed.
    #[default]
    Set,
    /// Unordered comparison preserving duplicate multiplicity.
    Multiset,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum CanonicalCell {
    Null,
    /// Finite numbers on the micro-unit grid (integers and most reals).
    Num(i128),
    /// Non-finite or out-of-grid reals, by bit pattern (NaN normalized).
    Bits(u64),
    Text(String),
    Blob(Vec<u8>),
}

pub(crate) fn canonical(cell: &Value) -> CanonicalCell {
    match cell {
        Value::Null => CanonicalCell::Null,
        Value::Integer(i) => CanonicalCell::Num(*i as i128 * SCALE as i128),
        Value::Real(r) => {
            let scaled = r * SCALE;
            if scaled.is_finite() && scaled.abs() < GRID_LIMIT {
                CanonicalCell::Num(scaled.round() as i128)
            } else if r.is_nan() {
                CanonicalCell::Bits(f64::NAN.to_bits())
            } else {
                CanonicalCell::Bits(r.to_bits())
            }
        }
        Value::Text(s) => CanonicalCell::Text(s.clone()),
        Value::Blob(b) => CanonicalCell::Blob(b.clone()),
    }
}

fn canonical_rows(rs: &ResultSet) -> Vec<Vec<CanonicalCell>> {
    rs.rows.iter().map(|row| row.iter().map(canonical).collect()).collect()
}

/// Set-mode equivalence (the default EX comparison).
pub fn results_equivalent(a: &ResultSet, b: &ResultSet) -> Result<bool, DbError> {
    results_equivalent_with(a, b, CompareMode::Set)
}

/// Row order is ignored and column order is significant in both modes.
pub fn results_equivalent_with(
    a: &ResultSet,
    b: &ResultSet,
    mode: CompareMode,
) -> Result<bool, DbError> {
    if a.truncated || b.truncated {
        return Err(DbError::IncomparableTruncated);
    }
    let mut counts: HashMap<Vec<CanonicalCell>, i64> = HashMap::new();
    for row in canonical_rows(a) {
        *counts.entry(row).or_insert(0) += 1;
    }
    match mode {
        CompareMode::Set => {
            let mut b_seen: HashMap<Vec<CanonicalCell>, ()> = HashMap::new();
            for row in canonical_rows(b) {
                if !counts.contains_key(&row) {
                    return Ok(false);
                }
                b_seen.insert(row, ());
            }
            Ok(b_seen.len() == counts.len())
        }
        CompareMode::Multiset => {
            for row in canonical_rows(b) {
                match counts.get_mut(&row) {
                    Some(n) => {
                        *n -= 1;
                        if *n == 0 {
                            counts.remove(&row);
                        }
                    }
                    None => return Ok(false),
                }
            }
            Ok(counts.is_empty())
        }
    }
}
