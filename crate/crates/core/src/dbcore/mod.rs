//! Read-only SQLite access, execution-state classification, and the
//! execution-accuracy metric.
//!
//! Every candidate query runs through [`DatabaseHandle::execute`], which
//! never raises: all failures are encoded as [`ExecState::Failure`]
//! outcomes so the correction loop can react to them uniformly.

mod compare;

pub use compare::{results_equivalent, results_equivalent_with, CompareMode};
pub(crate) use compare::{canonical, CanonicalCell};

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::duration_millis;

/// Row-counting stops here even when materialization is uncapped.
pub const DEFAULT_COUNT_CAP: u64 = 1_000_000;

const SQLITE_MAGIC: &[u8; 16] = b"SQLite format 3\0";

#[derive(Debug, Error)]
pub enum DbError {
    #[error("database file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("not a valid SQLite database: {0}")]
    CorruptDatabase(String),
    #[error("query failed: {0}")]
    QueryFailure(String),
    #[error("result set is truncated; cannot compare")]
    IncomparableTruncated,
    #[error("no pairs to score")]
    EmptyInput,
}

impl From<rusqlite::Error> for DbError {
    fn from(e: rusqlite::Error) -> Self {
        DbError::QueryFailure(e.to_string())
    }
}

/// A single cell value in the SQLite storage model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Compact single-line rendering used in execution feedback.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "None".to_string(),
            Value::Integer(i) => i.to_string(),
            Value::Real(r) => {
                if r.fract() == 0.0 && r.is_finite() && r.abs() < 1e15 {
                    format!("{:.1}", r)
                } else {
                    format!("{}", r)
                }
            }
            Value::Text(s) => format!("'{}'", s),
            Value::Blob(b) => format!("<blob {} bytes>", b.len()),
        }
    }
}

impl From<ValueRef<'_>> for Value {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::Blob(b.to_vec()),
        }
    }
}

/// Qualified column reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self { table: table.into(), column: column.into() }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: String,
    pub is_primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn primary_key_columns(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(|c| c.is_primary_key)
    }
}

/// Schema as introspected from the database catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSchema {
    pub tables: Vec<TableDef>,
}

impl RawSchema {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn contains(&self, column: &ColumnRef) -> bool {
        self.table(&column.table)
            .map(|t| t.column(&column.column).is_some())
            .unwrap_or(false)
    }

    /// All columns in catalog order.
    pub fn all_columns(&self) -> Vec<ColumnRef> {
        self.tables
            .iter()
            .flat_map(|t| {
                t.columns.iter().map(|c| ColumnRef::new(t.name.clone(), c.name.clone()))
            })
            .collect()
    }
}

/// Materialized query output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub truncated: bool,
    pub total_row_count: u64,
}

impl ResultSet {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Self {
        let total = rows.len() as u64;
        Self { columns, rows, truncated: false, total_row_count: total }
    }
}

/// The four execution states driving the correction loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecState {
    Success,
    NoneValued,
    Empty,
    Failure,
}

impl std::fmt::Display for ExecState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExecState::Success => "Success",
            ExecState::NoneValued => "None",
            ExecState::Empty => "Empty",
            ExecState::Failure => "Failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub state: ExecState,
    pub result: Option<ResultSet>,
    pub error_message: Option<String>,
    #[serde(with = "duration_millis")]
    pub elapsed: Duration,
}

impl ExecutionOutcome {
    pub fn failure(message: impl Into<String>, elapsed: Duration) -> Self {
        Self {
            state: ExecState::Failure,
            result: None,
            error_message: Some(message.into()),
            elapsed,
        }
    }

    pub fn from_result(result: ResultSet, elapsed: Duration) -> Self {
        let state = classify_outcome(Ok(&result));
        Self { state, result: Some(result), error_message: None, elapsed }
    }
}

/// Map a query result (or engine error) to one of the four states.
///
/// Precedence: engine error, then zero rows, then all-null rows, then a
/// lone scalar integer zero (a count of zero), and otherwise success.
pub fn classify_outcome(result: Result<&ResultSet, &str>) -> ExecState {
    let rs = match result {
        Err(_) => return ExecState::Failure,
        Ok(rs) => rs,
    };
    if rs.total_row_count == 0 {
        return ExecState::Empty;
    }
    if !rs.rows.is_empty() && rs.rows.iter().all(|row| row.iter().all(Value::is_null)) {
        return ExecState::NoneValued;
    }
    if rs.total_row_count == 1
        && rs.columns.len() == 1
        && rs.rows.len() == 1
        && rs.rows[0][0] == Value::Integer(0)
    {
        return ExecState::Empty;
    }
    ExecState::Success
}

/// Fraction of pairs where the prediction is non-Failure and its result
/// matches the gold result as a set of row tuples.
pub fn execution_accuracy(
    pairs: &[(ExecutionOutcome, ExecutionOutcome)],
) -> Result<f64, DbError> {
    if pairs.is_empty() {
        return Err(DbError::EmptyInput);
    }
    let correct = pairs
        .iter()
        .filter(|(pred, gold)| outcome_matches(pred, gold))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Single-pair EX check: Failure predictions never count, comparison
/// errors (truncated sides) count as incorrect.
pub fn outcome_matches(pred: &ExecutionOutcome, gold: &ExecutionOutcome) -> bool {
    if pred.state == ExecState::Failure {
        return false;
    }
    match (&pred.result, &gold.result) {
        (Some(p), Some(g)) => results_equivalent(p, g).unwrap_or(false),
        _ => false,
    }
}

/// SHA-256 of the file contents, hex-encoded.
pub fn file_checksum(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Strip leading whitespace and `--` / `/* */`  comments, then return the
/// first keyword.
fn first_keyword(sql: &str) -> Option<String> {
    let mut rest = sql;
    loop {
        rest = rest.trim_start();
        if let Some(stripped) = rest.strip_prefix("--") {
            rest = stripped.split_once('\n').map(|(_, tail)| tail).unwrap_or("");
        } else if let Some(stripped) = rest.strip_prefix("/*") {
            rest = stripped.split_once("*/").map(|(_, tail)| tail).unwrap_or("");
        } else {
            break;
        }
    }
    let word: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    if word.is_empty() {
        None
    } else {
        Some(word.to_ascii_uppercase())
    }
}

/// Read-only connection to one benchmark database.
///
/// Confined to a single thread of control; open additional handles for
/// concurrent readers.
#[derive(Debug)]
pub struct DatabaseHandle {
    conn: Connection,
    path: PathBuf,
    count_cap: u64,
}

impl DatabaseHandle {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Override the internal row-counting cap (scoring uses the default).
    pub fn set_count_cap(&mut self, cap: u64) {
        self.count_cap = cap.max(1);
    }

    pub fn checksum(&self) -> std::io::Result<String> {
        file_checksum(&self.path)
    }

    /// Introspect every user table with columns, declared types, primary
    /// keys, and foreign keys, in catalog order.
    pub fn introspect_schema(&self) -> Result<RawSchema, DbError> {
        let mut names = Vec::new();
        {
            let mut stmt = self.conn.prepare(
                "SELECT name FROM sqlite_master \
                 WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            )?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                names.push(row.get::<_, String>(0)?);
            }
        }

        let mut tables = Vec::with_capacity(names.len());
        for name in &names {
            let mut columns = Vec::new();
            {
                let mut stmt = self.conn.prepare(
                    "SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid",
                )?;
                let mut rows = stmt.query([name])?;
                while let Some(row) = rows.next()? {
                    columns.push(ColumnDef {
                        name: row.get(0)?,
                        declared_type: row.get(1)?,
                        is_primary_key: row.get::<_, i64>(2)? > 0,
                    });
                }
            }
            let mut foreign_keys = Vec::new();
            {
                let mut stmt = self.conn.prepare(
                    "SELECT \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1) \
                     ORDER BY id, seq",
                )?;
                let mut rows = stmt.query([name])?;
                while let Some(row) = rows.next()? {
                    foreign_keys.push((
                        row.get::<_, String>(0)?,
                        row.get::<_, String>(1)?,
                        row.get::<_, Option<String>>(2)?,
                    ));
                }
            }
            tables.push((name.clone(), columns, foreign_keys));
        }

        // Resolve FK targets against the collected tables; targets that do
        // not exist in the schema are dropped (benchmark databases contain
        // dangling references).
        let defs: Vec<TableDef> = tables
            .iter()
            .map(|(name, columns, _)| TableDef {
                name: name.clone(),
                columns: columns.clone(),
                foreign_keys: Vec::new(),
            })
            .collect();
        let lookup = RawSchema { tables: defs };

        let resolved = tables
            .into_iter()
            .map(|(name, columns, fks)| {
                let foreign_keys = fks
                    .into_iter()
                    .filter_map(|(to_table, from_column, to_column)| {
                        let target = lookup.table(&to_table)?;
                        let to_column = match to_column {
                            Some(c) => target.column(&c)?.name.clone(),
                            // Unnamed target refers to the primary key.
                            None => target.primary_key_columns().next()?.name.clone(),
                        };
                        Some(ForeignKey {
                            from_column,
                            to_table: target.name.clone(),
                            to_column,
                        })
                    })
                    .collect();
                TableDef { name, columns, foreign_keys }
            })
            .collect();
        Ok(RawSchema { tables: resolved })
    }

    /// Execute one read statement. Never raises: rejected statements,
    /// engine errors, and timeouts all come back as `Failure` outcomes.
    ///
    /// At most `row_cap` rows are materialized; counting continues up to
    /// the internal counting cap so `total_row_count` stays exact for
    /// ordinary results.
    pub fn execute(&self, sql: &str, timeout: Duration, row_cap: u64) -> ExecutionOutcome {
        let started = Instant::now();
        match first_keyword(sql) {
            Some(kw) if kw == "SELECT" || kw == "WITH" => {}
            _ => {
                return ExecutionOutcome::failure(
                    "only SELECT/WITH statements are permitted",
                    started.elapsed(),
                );
            }
        }

        let deadline = started + timeout;
        self.conn
            .progress_handler(4096, Some(move || Instant::now() >= deadline));
        let result = self.run_query(sql, row_cap);
        self.conn.progress_handler(0, None::<fn() -> bool>);

        let elapsed = started.elapsed();
        match result {
            Ok(rs) => ExecutionOutcome::from_result(rs, elapsed),
            Err(e) => {
                let interrupted = matches!(
                    &e,
                    rusqlite::Error::SqliteFailure(err, _)
                        if err.code == rusqlite::ErrorCode::OperationInterrupted
                );
                let message = if interrupted && Instant::now() >= deadline {
                    format!("query timed out after {:.1}s", timeout.as_secs_f64())
                } else {
                    e.to_string()
                };
                ExecutionOutcome::failure(message, elapsed)
            }
        }
    }

    /// Execute with materialization bounded only by the counting cap
    /// (the EX-scoring configuration).
    pub fn execute_unbounded(&self, sql: &str, timeout: Duration) -> ExecutionOutcome {
        self.execute(sql, timeout, self.count_cap)
    }

    fn run_query(&self, sql: &str, row_cap: u64) -> Result<ResultSet, rusqlite::Error> {
        let row_cap = row_cap.max(1);
        let mut stmt = self.conn.prepare(sql)?;
        let columns: Vec<String> =
            stmt.column_names().iter().map(|s| s.to_string()).collect();
        let ncols = columns.len();

        let mut rows = stmt.query([])?;
        let mut out: Vec<Vec<Value>> = Vec::new();
        let mut total: u64 = 0;
        let mut hit_count_cap = false;
        while let Some(row) = rows.next()? {
            total += 1;
            if (out.len() as u64) < row_cap {
                let mut cells = Vec::with_capacity(ncols);
                for i in 0..ncols {
                    cells.push(Value::from(row.get_ref(i)?));
                }
                out.push(cells);
            }
            if total >= self.count_cap {
                hit_count_cap = true;
                break;
            }
        }
        let truncated = hit_count_cap || total > out.len() as u64;
        Ok(ResultSet { columns, rows: out, truncated, total_row_count: total })
    }

    /// Raw query path for profiling probes (no outcome classification).
    pub(crate) fn query_rows(
        &self,
        sql: &str,
        params: &[&dyn rusqlite::ToSql],
    ) -> Result<Vec<Vec<Value>>, DbError> {
        let mut stmt = self.conn.prepare(sql)?;
        let ncols = stmt.column_count();
        let mut rows = stmt.query(params)?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut cells = Vec::with_capacity(ncols);
            for i in 0..ncols {
                cells.push(Value::from(row.get_ref(i)?));
            }
            out.push(cells);
        }
        Ok(out)
    }

    pub(crate) fn query_scalar(
        &self,
        sql: &str,
        params: &[&dyn rusqlite::ToSql],
    ) -> Result<Value, DbError> {
        let rows = self.query_rows(sql, params)?;
        rows.into_iter()
            .next()
            .and_then(|r| r.into_iter().next())
            .ok_or_else(|| DbError::QueryFailure(format!("no rows from probe: {sql}")))
    }
}

/// Open a benchmark database file for read-only execution.
pub fn open_database(path: impl AsRef<Path>) -> Result<DatabaseHandle, DbError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(DbError::FileNotFound(path.to_path_buf()));
    }
    let mut header = [0u8; 16];
    let mut file = std::fs::File::open(path)
        .map_err(|e| DbError::CorruptDatabase(e.to_string()))?;
    let n = file.read(&mut header).map_err(|e| DbError::CorruptDatabase(e.to_string()))?;
    if n < 16 || &header != SQLITE_MAGIC {
        return Err(DbError::CorruptDatabase(format!(
            "{} has no SQLite header",
            path.display()
        )));
    }

    let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)
        .map_err(|e| DbError::CorruptDatabase(e.to_string()))?;
    // Fail fast on unreadable catalogs.
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |_| Ok(()))
        .map_err(|e| DbError::CorruptDatabase(e.to_string()))?;
    Ok(DatabaseHandle { conn, path: path.to_path_buf(), count_cap: DEFAULT_COUNT_CAP })
}
