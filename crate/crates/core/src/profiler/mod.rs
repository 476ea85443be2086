//! Offline metadata profiling.
//!
//! One pass over a database produces a [`DatabaseProfile`]: per-column
//! statistics (ranges, value patterns, examples), inter-column relations
//! (duplicate/similar value sets across tables, functional dependencies
//! and their cardinalities within tables), and per-table summaries. The
//! profile is persisted as a versioned JSON artifact next to the
//! database and rebuilt only when the database file changes; rendering
//! ([`render_context`]) then turns it into the natural-language schema
//! contexts used by every downstream phase.

pub mod bm25;
pub mod describe;
pub mod fd;
pub mod pattern;
pub mod render;
pub mod similarity;

pub use bm25::{bm25_scores, retrieve_examples, ValueIndex};
pub use describe::{describe_table, load_descriptions};
pub use fd::{classify_cardinality, pairwise_fd, pairwise_fd_bidirectional, Cardinality};
pub use pattern::{abstract_pattern, mine_patterns};
pub use render::{
    render_column_text, render_context, render_schema_text, ContextMode, MetadataContext,
};
pub use similarity::{similarity_candidates, verify_column_relation, Embedder, TrigramEmbedder};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ProfilingConfig;
use crate::dbcore::{ColumnDef, ColumnRef, DatabaseHandle, DbError, TableDef, Value};
use crate::gateway::ChatProvider;
use crate::util::quote_ident;

/// Bump when the artifact layout changes; older artifacts are rebuilt.
pub const ARTIFACT_VERSION: u32 = 1;

/// Row cap for functional-dependency mining; dependencies are mined on a
/// prefix of large tables rather than scanning them exhaustively.
const FD_ROW_CAP: usize = 20_000;

/// Value fetch cap for pattern mining (the miner then samples 200).
const PATTERN_FETCH_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("no profile for column {0}")]
    MissingProfile(ColumnRef),
    #[error("artifact i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact is malformed: {0}")]
    MalformedArtifact(String),
}

/// Statistics for one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub table: String,
    pub column: String,
    pub declared_type: String,
    pub description: Option<String>,
    /// Present iff the column is numeric and has at least one value.
    pub range: Option<(f64, f64)>,
    /// Abstracted value patterns with frequencies; non-numeric columns only.
    pub patterns: Vec<(String, u64)>,
    pub null_count: u64,
    pub distinct_count: u64,
    /// (min, max) length of the values rendered as text.
    pub size_bounds: Option<(u64, u64)>,
    pub sampled_examples: Vec<String>,
    pub is_numeric: bool,
}

/// How two columns relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    /// Identical value sets, proven by probe queries.
    Duplicate,
    /// Semantically close; value sets differ or could not be verified.
    Similar,
    /// Same-table functional dependency in at least one direction.
    Dependency,
}

/// One relation between two columns, with functional-dependency flags
/// and the derived cardinality when both directions were evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterColumnRelation {
    pub a: ColumnRef,
    pub b: ColumnRef,
    pub kind: RelationKind,
    pub join_path: Option<String>,
    pub fd_ab: Option<bool>,
    pub fd_ba: Option<bool>,
    pub cardinality: Cardinality,
    pub note: Option<String>,
}

/// Per-table facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableProfile {
    pub table: String,
    pub row_count: u64,
    pub column_count: u64,
    pub description: Option<String>,
}

/// The complete persisted metadata artifact for one database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseProfile {
    pub version: u32,
    /// Checksum of the database file the profile was built from.
    pub schema_checksum: String,
    pub columns: Vec<ColumnProfile>,
    pub relations: Vec<InterColumnRelation>,
    pub tables: Vec<TableProfile>,
}

impl DatabaseProfile {
    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnProfile> {
        self.columns.iter().find(|p| {
            p.table.eq_ignore_ascii_case(table) && p.column.eq_ignore_ascii_case(column)
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfilerError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| ProfilerError::MalformedArtifact(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProfilerError> {
        let text = std::fs::read_to_string(path)?;
        let profile: DatabaseProfile = serde_json::from_str(&text)
            .map_err(|e| ProfilerError::MalformedArtifact(format!("{}: {e}", path.display())))?;
        if profile.version != ARTIFACT_VERSION {
            return Err(ProfilerError::MalformedArtifact(format!(
                "unsupported artifact version {} (expected {})",
                profile.version, ARTIFACT_VERSION
            )));
        }
        Ok(profile)
    }
}

/// Where the metadata artifact for a database lives.
pub fn default_artifact_path(db_path: &Path) -> PathBuf {
    db_path.with_extension("metadata.json")
}

/// Load the persisted profile if it matches the current database file;
/// otherwise rebuild and persist. Returns the profile and whether a
/// rebuild happened.
pub fn load_or_build(
    db: &DatabaseHandle,
    provider: Option<&dyn ChatProvider>,
    options: &ProfilingConfig,
) -> Result<(DatabaseProfile, bool), ProfilerError> {
    let artifact = default_artifact_path(db.path());
    let checksum = db.checksum()?;
    if let Ok(existing) = DatabaseProfile::load(&artifact) {
        if existing.schema_checksum == checksum {
            return Ok((existing, false));
        }
    }
    let profile = profile_database(db, provider, options)?;
    profile.save(&artifact)?;
    Ok((profile, true))
}

/// Profile every table and column of the database.
///
/// Curated descriptions are picked up from a `database_description`
/// directory next to the database file when present; the optional chat
/// provider adds table summaries (failures there are swallowed — a
/// profile never fails because the model did).
pub fn profile_database(
    db: &DatabaseHandle,
    provider: Option<&dyn ChatProvider>,
    options: &ProfilingConfig,
) -> Result<DatabaseProfile, ProfilerError> {
    let schema = db.introspect_schema()?;
    let descriptions = db
        .path()
        .parent()
        .map(load_descriptions)
        .unwrap_or_default();
    let described = |table: &str, column: &str| {
        descriptions
            .iter()
            .find(|(c, _)| {
                c.table.eq_ignore_ascii_case(table) && c.column.eq_ignore_ascii_case(column)
            })
            .map(|(_, d)| d.clone())
    };

    let mut columns = Vec::new();
    let mut relations = Vec::new();
    let mut tables = Vec::new();

    for table in &schema.tables {
        for column in &table.columns {
            let mut profile = profile_column(db, table, column, options)?;
            profile.description = described(&table.name, &column.name);
            columns.push(profile);
        }
        relations.extend(mine_dependencies(db, table)?);

        let row_count = match db.query_scalar(
            &format!("SELECT COUNT(*) FROM {}", quote_ident(&table.name)),
            &[],
        )? {
            Value::Integer(n) => n.max(0) as u64,
            _ => 0,
        };
        tables.push(TableProfile {
            table: table.name.clone(),
            row_count,
            column_count: table.columns.len() as u64,
            description: None,
        });
    }

    // Cross-table similarity: embed, shortlist, then verify with probes.
    let embedder = TrigramEmbedder::default();
    let candidates = similarity_candidates(&columns, &embedder, options.similarity_threshold);
    let mut verified: Vec<InterColumnRelation> = candidates
        .into_iter()
        .map(|(a, b)| {
            let join_path = fk_join_path(&schema, &a.table, &b.table);
            verify_column_relation(db, (a, b), join_path)
        })
        .collect();
    verified.append(&mut relations);
    let relations = verified;

    if let Some(provider) = provider {
        for table_profile in &mut tables {
            let summaries: Vec<String> = columns
                .iter()
                .filter(|c| c.table == table_profile.table)
                .map(|c| render_column_text(c, &[], ContextMode::Partial))
                .collect();
            table_profile.description =
                describe_table(provider, &table_profile.table, &summaries);
        }
    }

    Ok(DatabaseProfile {
        version: ARTIFACT_VERSION,
        schema_checksum: db.checksum()?,
        columns,
        relations,
        tables,
    })
}

/// Compute one column's statistics with aggregate probe queries.
pub fn profile_column(
    db: &DatabaseHandle,
    table: &TableDef,
    column: &ColumnDef,
    options: &ProfilingConfig,
) -> Result<ColumnProfile, ProfilerError> {
    let t = quote_ident(&table.name);
    let c = quote_ident(&column.name);

    let counts = db.query_rows(
        &format!("SELECT COUNT(*), COUNT({c}), COUNT(DISTINCT {c}) FROM {t}"),
        &[],
    )?;
    let as_u64 = |v: &Value| match v {
        Value::Integer(n) => (*n).max(0) as u64,
        _ => 0,
    };
    let (row_count, non_null, distinct_count) = match counts.first() {
        Some(row) if row.len() == 3 => (as_u64(&row[0]), as_u64(&row[1]), as_u64(&row[2])),
        _ => (0, 0, 0),
    };
    let null_count = row_count.saturating_sub(non_null);

    // Distinct values by descending frequency: the pool for example
    // sampling and for deciding whether a loosely-typed column is numeric.
    let distinct_sample: Vec<(String, u64)> = db
        .query_rows(
            &format!(
                "SELECT CAST({c} AS TEXT) AS v, COUNT(*) AS n FROM {t} \
                 WHERE {c} IS NOT NULL GROUP BY v ORDER BY n DESC, v ASC LIMIT {cap}",
                cap = options.pattern_sample_cap,
            ),
            &[],
        )?
        .into_iter()
        .filter_map(|row| match (row.first(), row.get(1)) {
            (Some(Value::Text(v)), Some(n)) => Some((v.clone(), as_u64(n))),
            _ => None,
        })
        .collect();

    let is_numeric = detect_numeric(&column.declared_type, &distinct_sample);

    let range = if is_numeric && non_null > 0 {
        let row = db.query_rows(
            &format!(
                "SELECT MIN(CAST({c} AS REAL)), MAX(CAST({c} AS REAL)) FROM {t} \
                 WHERE {c} IS NOT NULL"
            ),
            &[],
        )?;
        match row.first().map(|r| (to_f64(&r[0]), to_f64(&r[1]))) {
            Some((Some(min), Some(max))) => Some((min, max)),
            _ => None,
        }
    } else {
        None
    };

    let size_bounds = if non_null > 0 {
        let row = db.query_rows(
            &format!(
                "SELECT MIN(LENGTH(CAST({c} AS TEXT))), MAX(LENGTH(CAST({c} AS TEXT))) \
                 FROM {t} WHERE {c} IS NOT NULL"
            ),
            &[],
        )?;
        match row.first() {
            Some(r) if r.len() == 2 && !r[0].is_null() => Some((as_u64(&r[0]), as_u64(&r[1]))),
            _ => None,
        }
    } else {
        None
    };

    let patterns = if !is_numeric && non_null > 0 {
        let values: Vec<String> = db
            .query_rows(
                &format!(
                    "SELECT CAST({c} AS TEXT) FROM {t} WHERE {c} IS NOT NULL \
                     ORDER BY 1 LIMIT {PATTERN_FETCH_CAP}"
                ),
                &[],
            )?
            .into_iter()
            .filter_map(|row| match row.into_iter().next() {
                Some(Value::Text(v)) => Some(v),
                _ => None,
            })
            .collect();
        mine_patterns(&values, options.pattern_sample_cap, options.sampling_seed)
    } else {
        Vec::new()
    };

    let sampled_examples = pick_examples(
        &distinct_sample,
        options.examples_per_column,
        options.sampling_seed,
    );

    Ok(ColumnProfile {
        table: table.name.clone(),
        column: column.name.clone(),
        declared_type: column.declared_type.clone(),
        description: None,
        range,
        patterns,
        null_count,
        distinct_count,
        size_bounds,
        sampled_examples,
        is_numeric,
    })
}

/// Declared INTEGER/REAL columns are numeric and declared text columns
/// are not; loosely-typed declarations (NUMERIC, DECIMAL, BOOLEAN, DATE,
/// untyped) count as numeric when at least 95% of the sampled distinct
/// values parse as numbers.
fn detect_numeric(declared_type: &str, sampled: &[(String, u64)]) -> bool {
    let ty = declared_type.to_ascii_uppercase();
    if ty.contains("INT") || ty.contains("REAL") || ty.contains("FLOA") || ty.contains("DOUB") {
        return true;
    }
    if ty.contains("CHAR") || ty.contains("CLOB") || ty.contains("TEXT") || ty.contains("BLOB") {
        return false;
    }
    if sampled.is_empty() {
        return false;
    }
    let parsed = sampled.iter().filter(|(v, _)| v.parse::<f64>().is_ok()).count();
    (parsed as f64) >= 0.95 * (sampled.len() as f64)
}

fn to_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Real(r) => Some(*r),
        _ => None,
    }
}

/// Seeded choice of `k` examples from the frequency-ordered pool,
/// returned in pool order.
fn pick_examples(pool: &[(String, u64)], k: usize, seed: u64) -> Vec<String> {
    if pool.len() <= k {
        return pool.iter().map(|(v, _)| v.clone()).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..pool.len()).collect();
    let mut chosen: Vec<usize> = indices.choose_multiple(&mut rng, k).copied().collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| pool[i].0.clone()).collect()
}

/// Mine same-table pairwise functional dependencies over a row prefix.
/// Only pairs holding in at least one direction are recorded.
fn mine_dependencies(
    db: &DatabaseHandle,
    table: &TableDef,
) -> Result<Vec<InterColumnRelation>, ProfilerError> {
    if table.columns.len() < 2 {
        return Ok(Vec::new());
    }
    let cols: Vec<String> = table.columns.iter().map(|c| quote_ident(&c.name)).collect();
    let rows = db.query_rows(
        &format!(
            "SELECT {} FROM {} LIMIT {FD_ROW_CAP}",
            cols.join(", "),
            quote_ident(&table.name)
        ),
        &[],
    )?;

    let mut out = Vec::new();
    for i in 0..table.columns.len() {
        for j in (i + 1)..table.columns.len() {
            let pairs: Vec<(Value, Value)> =
                rows.iter().map(|r| (r[i].clone(), r[j].clone())).collect();
            // A dependency needs evidence: at least one fully non-null pair.
            if !pairs.iter().any(|(a, b)| !a.is_null() && !b.is_null()) {
                continue;
            }
            let (fd_ab, fd_ba) = pairwise_fd_bidirectional(&pairs);
            if !(fd_ab || fd_ba) {
                continue;
            }
            out.push(InterColumnRelation {
                a: ColumnRef::new(table.name.clone(), table.columns[i].name.clone()),
                b: ColumnRef::new(table.name.clone(), table.columns[j].name.clone()),
                kind: RelationKind::Dependency,
                join_path: None,
                fd_ab: Some(fd_ab),
                fd_ba: Some(fd_ba),
                cardinality: classify_cardinality(fd_ab, fd_ba),
                note: None,
            });
        }
    }
    Ok(out)
}

/// First declared foreign key connecting the two tables, as a join
/// predicate, if any.
fn fk_join_path(
    schema: &crate::dbcore::RawSchema,
    table_a: &str,
    table_b: &str,
) -> Option<String> {
    for table in &schema.tables {
        let from_a = table.name.eq_ignore_ascii_case(table_a);
        let from_b = table.name.eq_ignore_ascii_case(table_b);
        if !from_a && !from_b {
            continue;
        }
        let other = if from_a { table_b } else { table_a };
        for fk in &table.foreign_keys {
            if fk.to_table.eq_ignore_ascii_case(other) {
                return Some(format!(
                    "{}.{} = {}.{}",
                    table.name, fk.from_column, fk.to_table, fk.to_column
                ));
            }
        }
    }
    None
}

/// Build the per-column BM25 value index over non-numeric columns.
/// Documents are distinct values, most frequent first, capped per column.
pub fn build_value_index(
    db: &DatabaseHandle,
    profile: &DatabaseProfile,
    per_column_cap: usize,
) -> Result<ValueIndex, ProfilerError> {
    let mut index = ValueIndex::new();
    for column in profile.columns.iter().filter(|c| !c.is_numeric) {
        let values: Vec<String> = db
            .query_rows(
                &format!(
                    "SELECT CAST({c} AS TEXT) AS v, COUNT(*) AS n FROM {t} \
                     WHERE {c} IS NOT NULL GROUP BY v ORDER BY n DESC, v ASC LIMIT {cap}",
                    c = quote_ident(&column.column),
                    t = quote_ident(&column.table),
                    cap = per_column_cap,
                ),
                &[],
            )?
            .into_iter()
            .filter_map(|row| match row.into_iter().next() {
                Some(Value::Text(v)) => Some(v),
                _ => None,
            })
            .collect();
        if !values.is_empty() {
            index.insert_column(ColumnRef::new(column.table.clone(), column.column.clone()), values);
        }
    }
    Ok(index)
}

/// Dataset layout helper: `<dir>/<dir-name>.sqlite` and BIRD's name
/// pattern `<dir>/<dir-name>.db` are both recognized.
pub fn find_database_file(dir: &Path) -> Option<PathBuf> {
    let stem = dir.file_name()?.to_str()?;
    for ext in ["sqlite", "db"] {
        let candidate = dir.join(format!("{stem}.{ext}"));
        if candidate.is_file() {
            return Some(candidate);
        }
    }
    // Fall back to the first SQLite-looking file in the directory.
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| e == "sqlite" || e == "db")
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    entries.into_iter().next()
}
