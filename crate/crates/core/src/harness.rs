//! Benchmark harness: dataset loading, end-to-end runs, EX reporting
//! with a difficulty breakdown, and per-phase cost accounting.
//!
//! A dataset directory holds one questions file (JSON array) and one
//! databases subdirectory with a folder per database. Both the common
//! benchmark dialects are understood: records carrying `question_id`,
//! `evidence`, `SQL` and `difficulty`, and the leaner layout with only
//! `db_id`, `question` and `query`. An optional gold-override file
//! patches individual samples by `question_id` — corrected gold SQL,
//! clarified questions or fixed evidence — without touching the dataset
//! on disk.
//!
//! Runs persist one JSON record per sample under the run directory, so
//! interrupted runs resume by skipping completed question ids, and the
//! report can always be re-aggregated from disk. With a replay cache
//! and deterministic timing, repeated runs serialize byte-identically.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::dbcore::{
    open_database, results_equivalent_with, CompareMode, DbError, ExecState,
    ExecutionOutcome,
};
use crate::gateway::ChatProvider;
use crate::generation::{load_few_shot_store, FewShotCase};
use crate::pipeline::{answer_question, PhaseBreakdown, QuestionResult};
use crate::profiler::{
    default_artifact_path, find_database_file, load_or_build,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
    #[error("no samples to run")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Db(#[from] DbError),
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Some(Self::Simple),
            "moderate" => Some(Self::Moderate),
            "challenging" => Some(Self::Challenging),
            _ => None,
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Simple => write!(f, "simple"),
            Self::Moderate => write!(f, "moderate"),
            Self::Challenging => write!(f, "challenging"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub question_id: i64,
    pub db_id: String,
    pub question: String,
    pub evidence: Option<String>,
    pub gold_sql: String,
    pub difficulty: Option<Difficulty>,
}

/// A loaded dataset: samples in file order plus the databases root.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<BenchmarkSample>,
    pub databases_dir: PathBuf,
}

impl Dataset {
    pub fn database_dir(&self, db_id: &str) -> PathBuf {
        self.databases_dir.join(db_id)
    }
}

/// On-disk question record; tolerant of both benchmark dialects.
#[derive(Debug, Deserialize)]
struct RawSample {
    #[serde(default)]
    question_id: Option<i64>,
    db_id: String,
    question: String,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(default, rename = "SQL", alias = "query")]
    sql: Option<String>,
    #[serde(default)]
    difficulty: Option<String>,
}

/// One gold-override record: any subset of the mutable fields.
#[derive(Debug, Deserialize)]
struct OverrideRecord {
    question_id: i64,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(default, rename = "SQL", alias = "sql", alias = "query")]
    sql: Option<String>,
}

const QUESTION_FILE_CANDIDATES: &[&str] =
    &["dev.json", "test.json", "train.json", "questions.json"];
const DATABASES_DIR_CANDIDATES: &[&str] = &[
    "dev_databases",
    "test_databases",
    "train_databases",
    "databases",
    "database",
];

/// Loads a benchmark directory into samples, applying the optional
/// gold-override file. Samples keep file order; question ids missing
/// from the file are assigned from the record index. Every referenced
/// database directory must exist and hold a database file.
pub fn load_dataset(
    dir: &Path,
    gold_override: Option<&Path>,
) -> Result<Dataset, HarnessError> {
    let questions_path = find_questions_file(dir)?;
    let databases_dir = DATABASES_DIR_CANDIDATES
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_dir())
        .ok_or_else(|| {
            HarnessError::MalformedDataset(format!(
                "no databases subdirectory under {}",
                dir.display()
            ))
        })?;

    let text = fs::read_to_string(&questions_path)?;
    let raw: Vec<RawSample> = serde_json::from_str(&text).map_err(|e| {
        HarnessError::MalformedDataset(format!(
            "{}: {e}",
            questions_path.display()
        ))
    })?;

    let mut samples = Vec::with_capacity(raw.len());
    for (index, record) in raw.into_iter().enumerate() {
        let gold_sql = record.sql.ok_or_else(|| {
            HarnessError::MalformedDataset(format!(
                "record {index}: no gold SQL field"
            ))
        })?;
        let db_dir = databases_dir.join(&record.db_id);
        if find_database_file(&db_dir).is_none() {
            return Err(HarnessError::MalformedDataset(format!(
                "record {index}: no database file for db_id `{}` under {}",
                record.db_id,
                db_dir.display()
            )));
        }
        samples.push(BenchmarkSample {
            question_id: record.question_id.unwrap_or(index as i64),
            db_id: record.db_id,
            question: record.question,
            evidence: record
                .evidence
                .filter(|e| !e.trim().is_empty()),
            gold_sql,
            difficulty: record.difficulty.as_deref().and_then(Difficulty::parse),
        });
    }

    if let Some(path) = gold_override {
        apply_gold_override(&mut samples, path)?;
    }
    Ok(Dataset { samples, databases_dir })
}

fn find_questions_file(dir: &Path) -> Result<PathBuf, HarnessError> {
    for name in QUESTION_FILE_CANDIDATES {
        let path = dir.join(name);
        if path.is_file() {
            return Ok(path);
        }
    }
    // Fall back to the lexicographically first other .json file.
    let mut jsons: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file() && p.extension().is_some_and(|x| x == "json")
        })
        .collect();
    jsons.sort();
    jsons.into_iter().next().ok_or_else(|| {
        HarnessError::MalformedDataset(format!(
            "no questions file under {}",
            dir.display()
        ))
    })
}

fn apply_gold_override(
    samples: &mut [BenchmarkSample],
    path: &Path,
) -> Result<(), HarnessError> {
    let text = fs::read_to_string(path)?;
    let records: Vec<OverrideRecord> =
        serde_json::from_str(&text).map_err(|e| {
            HarnessError::MalformedDataset(format!("{}: {e}", path.display()))
        })?;
    let mut by_id: BTreeMap<i64, &mut BenchmarkSample> =
        samples.iter_mut().map(|s| (s.question_id, s)).collect();
    for record in records {
        let Some(sample) = by_id.get_mut(&record.question_id) else {
            continue;
        };
        if let Some(question) = record.question {
            sample.question = question;
        }
        if let Some(evidence) = record.evidence {
            sample.evidence =
                (!evidence.trim().is_empty()).then_some(evidence);
        }
        if let Some(sql) = record.sql {
            sample.gold_sql = sql;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Benchmark runs
// ---------------------------------------------------------------------------

/// Per-run switches that are not model or pipeline configuration.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Where per-sample records and the report land.
    pub run_dir: PathBuf,
    /// Build missing metadata artifacts instead of failing the sample.
    pub profile_on_demand: bool,
    /// Zero all wall-clock fields (replay runs serialize identically).
    pub deterministic_timing: bool,
}

/// Everything persisted for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub question_id: i64,
    pub db_id: String,
    pub difficulty: Option<Difficulty>,
    pub final_sql: String,
    pub ex_correct: bool,
    pub interaction_count: usize,
    pub elapsed_ms: u64,
    pub output_tokens: u64,
    pub phases: PhaseBreakdown,
    /// Set when the sample failed outside normal SQL execution
    /// (missing artifact, gateway error, gold failure, ...).
    pub error: Option<String>,
    /// Full audit trail including per-candidate transcripts.
    pub detail: Option<QuestionResult>,
}

/// Aggregated outcome of a run; a pure function of the sample records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub per_sample: Vec<SampleRecord>,
    pub ex_overall: f64,
    pub ex_by_difficulty: BTreeMap<String, DifficultyBucket>,
    pub samples_total: usize,
    pub samples_failed: usize,
    pub total_elapsed_ms: u64,
    pub total_output_tokens: u64,
    pub phases: PhaseBreakdown,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DifficultyBucket {
    pub ex: f64,
    pub count: usize,
}

/// EX for one sample, honoring the configured comparison strictness. A
/// failed prediction never matches; otherwise the materialized result
/// sets must be equivalent.
pub fn ex_matches(
    predicted: &ExecutionOutcome,
    gold: &ExecutionOutcome,
    mode: CompareMode,
) -> bool {
    if predicted.state == ExecState::Failure {
        return false;
    }
    match (&predicted.result, &gold.result) {
        (Some(p), Some(g)) => {
            results_equivalent_with(p, g, mode).unwrap_or(false)
        }
        _ => false,
    }
}

/// Runs the pipeline over every sample with a bounded worker pool.
///
/// Completed samples (a record file already on disk) are skipped, so a
/// rerun with the same run directory resumes where it stopped. One
/// sample's failure is recorded in its own record and the run
/// continues. The aggregated report is also written to
/// `<run_dir>/report.json`.
pub fn run_benchmark(
    provider: &dyn ChatProvider,
    dataset: &Dataset,
    config: &Config,
    options: &RunOptions,
) -> Result<RunReport, HarnessError> {
    if dataset.samples.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let samples_dir = options.run_dir.join("samples");
    fs::create_dir_all(&samples_dir)?;

    let store: Vec<FewShotCase> = match &config.run.few_shot_store {
        Some(path) => load_few_shot_store(path)?,
        None => Vec::new(),
    };

    let records: Mutex<Vec<SampleRecord>> = Mutex::new(Vec::new());
    let next: AtomicUsize = AtomicUsize::new(0);
    let workers = config.run.workers.max(1).min(dataset.samples.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = dataset.samples.get(index) else {
                    break;
                };
                let record_path =
                    samples_dir.join(format!("{}.json", sample.question_id));
                let record = match load_record(&record_path) {
                    Some(existing) => existing,
                    None => {
                        let record = run_sample(
                            provider, dataset, sample, &store, config, options,
                        );
                        // Persistence failures surface in the record
                        // rather than killing the worker.
                        let record = match persist_record(&record_path, &record)
                        {
                            Ok(()) => record,
                            Err(e) => SampleRecord {
                                error: Some(format!(
                                    "cannot persist record: {e}"
                                )),
                                ..record
                            },
                        };
                        record
                    }
                };
                records.lock().expect("poisoned").push(record);
            });
        }
    });

    let mut per_sample = records.into_inner().expect("poisoned");
    per_sample.sort_by_key(|r| r.question_id);
    let report = aggregate(per_sample);
    let report_path = options.run_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .expect("report serialization cannot fail");
    fs::write(&report_path, json.as_bytes())?;
    Ok(report)
}

/// Builds the report from sample records (used in-run and for
/// re-aggregation from disk). Records are expected sorted by
/// question_id.
pub fn aggregate(per_sample: Vec<SampleRecord>) -> RunReport {
    let samples_total = per_sample.len();
    let correct = per_sample.iter().filter(|r| r.ex_correct).count();
    let ex_overall = if samples_total == 0 {
        0.0
    } else {
        correct as f64 / samples_total as f64
    };

    let mut ex_by_difficulty = BTreeMap::new();
    let labels: BTreeSet<Difficulty> =
        per_sample.iter().filter_map(|r| r.difficulty).collect();
    for label in labels {
        let bucket: Vec<&SampleRecord> = per_sample
            .iter()
            .filter(|r| r.difficulty == Some(label))
            .collect();
        let correct = bucket.iter().filter(|r| r.ex_correct).count();
        ex_by_difficulty.insert(
            label.to_string(),
            DifficultyBucket {
                ex: correct as f64 / bucket.len() as f64,
                count: bucket.len(),
            },
        );
    }

    let samples_failed =
        per_sample.iter().filter(|r| r.error.is_some()).count();
    let total_elapsed_ms = per_sample.iter().map(|r| r.elapsed_ms).sum();
    let total_output_tokens =
        per_sample.iter().map(|r| r.output_tokens).sum();
    let mut phases = PhaseBreakdown::default();
    for record in &per_sample {
        phases.merge(&record.phases);
    }

    RunReport {
        per_sample,
        ex_overall,
        ex_by_difficulty,
        samples_total,
        samples_failed,
        total_elapsed_ms,
        total_output_tokens,
        phases,
    }
}

/// Reads a previously persisted record; unparseable files are ignored
/// so a half-written record reruns instead of poisoning the resume.
fn load_record(path: &Path) -> Option<SampleRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn persist_record(path: &Path, record: &SampleRecord) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    let json = serde_json::to_string_pretty(record)
        .expect("record serialization cannot fail");
    fs::write(&tmp, json.as_bytes())?;
    fs::rename(&tmp, path)
}

/// One sample, fully isolated: its own database handle and profile;
/// every failure path lands in the record's error field.
fn run_sample(
    provider: &dyn ChatProvider,
    dataset: &Dataset,
    sample: &BenchmarkSample,
    store: &[FewShotCase],
    config: &Config,
    options: &RunOptions,
) -> SampleRecord {
    let started = Instant::now();
    let mut record = SampleRecord {
        question_id: sample.question_id,
        db_id: sample.db_id.clone(),
        difficulty: sample.difficulty,
        final_sql: String::new(),
        ex_correct: false,
        interaction_count: 0,
        elapsed_ms: 0,
        output_tokens: 0,
        phases: PhaseBreakdown::default(),
        error: None,
        detail: None,
    };

    let outcome = (|| -> Result<(), String> {
        let db_dir = dataset.database_dir(&sample.db_id);
        let db_file = find_database_file(&db_dir).ok_or_else(|| {
            format!("no database file under {}", db_dir.display())
        })?;
        let db = open_database(&db_file).map_err(|e| e.to_string())?;

        let artifact = default_artifact_path(&db_file);
        if !artifact.exists() && !options.profile_on_demand {
            return Err(format!(
                "no metadata artifact at {}; profile the database first or \
                 enable profiling on demand",
                artifact.display()
            ));
        }
        let (profile, _) = load_or_build(&db, None, &config.profiling)
            .map_err(|e| e.to_string())?;

        let timeout = config.limits.statement_timeout();
        let scoring_cap = config.limits.scoring_count_cap;
        let gold = db.execute(&sample.gold_sql, timeout, scoring_cap);
        if gold.state == ExecState::Failure {
            return Err(format!(
                "gold SQL failed: {}",
                gold.error_message.as_deref().unwrap_or("unknown error")
            ));
        }

        let mut result = answer_question(
            provider,
            &db,
            &profile,
            &sample.question,
            sample.evidence.as_deref(),
            store,
            config,
        )
        .map_err(|e| e.to_string())?;
        if options.deterministic_timing {
            result.zero_elapsed();
        }

        let compare_mode = if config.selection.strict_multiset {
            CompareMode::Multiset
        } else {
            CompareMode::Set
        };
        record.ex_correct =
            ex_matches(&result.final_outcome, &gold, compare_mode);
        record.final_sql = result.final_sql.clone();
        record.interaction_count = result.interaction_count;
        record.output_tokens = result.total_output_tokens();
        record.phases = result.phases;
        record.detail = Some(result);
        Ok(())
    })();

    if let Err(message) = outcome {
        record.error = Some(message);
    }
    record.elapsed_ms = if options.deterministic_timing {
        0
    } else {
        started.elapsed().as_millis() as u64
    };
    record
}

// ---------------------------------------------------------------------------
// Cost reporting
// ---------------------------------------------------------------------------

/// One pipeline-phase row of the cost table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostRow {
    pub phase: String,
    pub elapsed_ms: u64,
    pub output_tokens: u64,
}

/// Per-phase cost totals in pipeline order. The selection row always
/// reports zero tokens: voting is pure computation.
pub fn cost_report(report: &RunReport) -> Vec<CostRow> {
    let p = &report.phases;
    vec![
        CostRow {
            phase: "Schema Linking".into(),
            elapsed_ms: p.schema_linking.elapsed_ms,
            output_tokens: p.schema_linking.output_tokens,
        },
        CostRow {
            phase: "SQL Generation".into(),
            elapsed_ms: p.sql_generation.elapsed_ms,
            output_tokens: p.sql_generation.output_tokens,
        },
        CostRow {
            phase: "Function Alignment".into(),
            elapsed_ms: p.function_alignment.elapsed_ms,
            output_tokens: p.function_alignment.output_tokens,
        },
        CostRow {
            phase: "Output Alignment".into(),
            elapsed_ms: p.output_alignment.elapsed_ms,
            output_tokens: p.output_alignment.output_tokens,
        },
        CostRow {
            phase: "SQL Selection".into(),
            elapsed_ms: p.selection.elapsed_ms,
            output_tokens: 0,
        },
    ]
}

/// Plain-text run summary: EX, difficulty breakdown, totals, and the
/// cost table.
pub fn render_summary(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Samples: {} ({} failed)\n",
        report.samples_total, report.samples_failed
    ));
    out.push_str(&format!("EX overall: {:.2}%\n", report.ex_overall * 100.0));
    for (label, bucket) in &report.ex_by_difficulty {
        out.push_str(&format!(
            "EX {label}: {:.2}% ({} samples)\n",
            bucket.ex * 100.0,
            bucket.count
        ));
    }
    out.push_str(&format!(
        "Total wall time: {} ms, total output tokens: {}\n",
        report.total_elapsed_ms, report.total_output_tokens
    ));
    out.push_str("\nPhase                 Time (ms)    Output tokens\n");
    for row in cost_report(report) {
        out.push_str(&format!(
            "{:<20} {:>10} {:>16}\n",
            row.phase, row.elapsed_ms, row.output_tokens
        ));
    }
    out
}
