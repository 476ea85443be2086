//! Per-question orchestration of the five phases: context construction
//! (already materialized as a database profile), SQL-driven schema
//! linking, intermediate-correction generation, rule-guided alignment,
//! and majority-vote selection.
//!
//! One call to [`answer_question`] runs the configured candidate
//! schedule end to end and returns the voted SQL together with a full
//! per-candidate audit trail and per-phase time/token accounting.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{align_functions, align_output, AlignmentAssets};
use crate::config::{Config, ConfigError};
use crate::dbcore::{DatabaseHandle, DbError, ExecutionOutcome, RawSchema};
use crate::gateway::{ChatProvider, ChatTranscript};
use crate::generation::{
    render_cases, retrieve_similar_cases, run_generation, Branch, FewShotCase,
    GenerationError, GenerationRequest, RuleSet,
};
use crate::linking::{link_schema, LinkingError};
use crate::profiler::{
    render_context, ContextMode, DatabaseProfile, MetadataContext,
    ProfilerError,
};
use crate::selection::{
    candidate_schedule, vote, CandidateSql, ScheduleEntry, SelectionError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
    #[error(transparent)]
    Linking(#[from] LinkingError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("cannot load alignment assets: {0}")]
    Assets(#[from] std::io::Error),
}

/// Wall time and model tokens one phase consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub elapsed_ms: u64,
    pub output_tokens: u64,
}

impl PhaseStats {
    fn add(&mut self, elapsed: Duration, tokens: u64) {
        self.elapsed_ms += elapsed.as_millis() as u64;
        self.output_tokens += tokens;
    }

    pub fn merge(&mut self, other: &PhaseStats) {
        self.elapsed_ms += other.elapsed_ms;
        self.output_tokens += other.output_tokens;
    }
}

/// Per-phase accounting across all candidates of one question.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub schema_linking: PhaseStats,
    pub sql_generation: PhaseStats,
    pub function_alignment: PhaseStats,
    pub output_alignment: PhaseStats,
    pub selection: PhaseStats,
}

impl PhaseBreakdown {
    pub fn merge(&mut self, other: &PhaseBreakdown) {
        self.schema_linking.merge(&other.schema_linking);
        self.sql_generation.merge(&other.sql_generation);
        self.function_alignment.merge(&other.function_alignment);
        self.output_alignment.merge(&other.output_alignment);
        self.selection.merge(&other.selection);
    }

    pub fn total_tokens(&self) -> u64 {
        self.schema_linking.output_tokens
            + self.sql_generation.output_tokens
            + self.function_alignment.output_tokens
            + self.output_alignment.output_tokens
            + self.selection.output_tokens
    }

    pub fn total_elapsed_ms(&self) -> u64 {
        self.schema_linking.elapsed_ms
            + self.sql_generation.elapsed_ms
            + self.function_alignment.elapsed_ms
            + self.output_alignment.elapsed_ms
            + self.selection.elapsed_ms
    }

    fn zero_elapsed(&mut self) {
        self.schema_linking.elapsed_ms = 0;
        self.sql_generation.elapsed_ms = 0;
        self.function_alignment.elapsed_ms = 0;
        self.output_alignment.elapsed_ms = 0;
        self.selection.elapsed_ms = 0;
    }
}

/// Audit record of one schedule entry, carrying the SQL at every stage
/// boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub ordinal: usize,
    pub mode: ContextMode,
    pub temperature: f64,
    pub sql_d: String,
    pub sql_g: String,
    pub sql_f: String,
    pub sql_o: String,
    pub branch: Branch,
    pub interaction_count: usize,
    pub rules: RuleSet,
    pub outcome: ExecutionOutcome,
    /// Full generation-session message log, kept for audit.
    pub transcript: ChatTranscript,
}

/// The answer for one question plus everything needed for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionResult {
    pub final_sql: String,
    pub final_outcome: ExecutionOutcome,
    pub winning_ordinal: usize,
    pub candidates: Vec<CandidateReport>,
    pub phases: PhaseBreakdown,
    /// Executor invocations of the winning candidate's session.
    pub interaction_count: usize,
}

impl QuestionResult {
    pub fn total_output_tokens(&self) -> u64 {
        self.phases.total_tokens()
    }

    /// Strips wall-clock traces so replayed runs serialize identically.
    pub fn zero_elapsed(&mut self) {
        self.phases.zero_elapsed();
        self.final_outcome.elapsed = Duration::ZERO;
        for candidate in &mut self.candidates {
            candidate.outcome.elapsed = Duration::ZERO;
        }
    }
}

/// Runs the full candidate schedule for one question and votes.
///
/// Candidates run sequentially in schedule order; each gets a fresh
/// linking + generation + alignment chain at its own temperature and
/// metadata granularity, and its post-alignment SQL is executed once
/// with the scoring row cap. Candidate errors propagate — the caller
/// (the benchmark harness) isolates failures per sample.
pub fn answer_question(
    provider: &dyn ChatProvider,
    db: &DatabaseHandle,
    profile: &DatabaseProfile,
    question: &str,
    evidence: Option<&str>,
    store: &[FewShotCase],
    config: &Config,
) -> Result<QuestionResult, PipelineError> {
    let schedule = candidate_schedule(&config.selection)?;
    answer_question_with_schedule(
        provider, db, profile, question, evidence, store, config, schedule,
    )
}

/// [`answer_question`] with an explicit candidate schedule, for callers
/// that override the configured one (a forced context mode, ad-hoc
/// temperature sweeps).
#[allow(clippy::too_many_arguments)]
pub fn answer_question_with_schedule(
    provider: &dyn ChatProvider,
    db: &DatabaseHandle,
    profile: &DatabaseProfile,
    question: &str,
    evidence: Option<&str>,
    store: &[FewShotCase],
    config: &Config,
    schedule: Vec<ScheduleEntry>,
) -> Result<QuestionResult, PipelineError> {
    let schema = db.introspect_schema()?;
    let assets = AlignmentAssets::from_config(&config.alignment)?;
    let timeout = config.limits.statement_timeout();
    let internal_cap = config.limits.internal_row_cap as u64;
    let scoring_cap = config.limits.scoring_count_cap;

    let mut contexts: ContextPair = ContextPair::default();
    let mut phases = PhaseBreakdown::default();
    let mut reports: Vec<CandidateReport> = Vec::with_capacity(schedule.len());

    for (ordinal, (mode, temperature)) in schedule.into_iter().enumerate() {
        let context = contexts.get(mode, &schema, profile)?;

        let started = Instant::now();
        let (filtered, draft) = link_schema(
            provider,
            question,
            evidence,
            context,
            &schema,
            config.limits.draft_retries,
            temperature,
        )?;
        phases.schema_linking.add(started.elapsed(), draft.output_tokens);

        let cases =
            retrieve_similar_cases(store, question, Some(&schema), config.run.few_shot_k);
        let cases_text = render_cases(&cases);
        let started = Instant::now();
        let generated = run_generation(
            provider,
            db,
            &GenerationRequest {
                question,
                schema_text: &filtered.rendered_text,
                sql_d: &draft.sql,
                cases_text: &cases_text,
                schema: &schema,
                relations: &profile.relations,
                temperature,
                max_rounds: config.limits.max_rounds,
                feedback_rows: config.limits.feedback_rows,
                statement_timeout: timeout,
                row_cap: internal_cap,
            },
        )?;
        phases
            .sql_generation
            .add(started.elapsed(), generated.transcript.total_output_tokens());

        let sql_f = if config.alignment.function_alignment {
            let started = Instant::now();
            let stage = align_functions(
                provider,
                db,
                question,
                &generated.sql_g,
                &generated.rules,
                &assets.rule_catalog,
                temperature,
                timeout,
                internal_cap,
            );
            phases
                .function_alignment
                .add(started.elapsed(), stage.output_tokens);
            stage.sql
        } else {
            generated.sql_g.clone()
        };

        let sql_o = if config.alignment.output_alignment {
            let started = Instant::now();
            let stage = align_output(
                provider,
                question,
                &sql_f,
                &assets.example_bank,
                temperature,
            );
            phases
                .output_alignment
                .add(started.elapsed(), stage.output_tokens);
            stage.sql
        } else {
            sql_f.clone()
        };

        let outcome = db.execute(&sql_o, timeout, scoring_cap);
        reports.push(CandidateReport {
            ordinal,
            mode,
            temperature,
            sql_d: draft.sql,
            sql_g: generated.sql_g,
            sql_f,
            sql_o,
            branch: generated.branch,
            interaction_count: generated.interaction_count,
            rules: generated.rules,
            outcome,
            transcript: generated.transcript,
        });
    }

    let started = Instant::now();
    let candidates: Vec<CandidateSql> = reports
        .iter()
        .map(|r| CandidateSql {
            sql: r.sql_o.clone(),
            mode: r.mode,
            temperature: r.temperature,
            outcome: r.outcome.clone(),
            ordinal: r.ordinal,
        })
        .collect();
    let compare_mode = if config.selection.strict_multiset {
        crate::dbcore::CompareMode::Multiset
    } else {
        crate::dbcore::CompareMode::Set
    };
    let winner = vote(&candidates, compare_mode)?;
    let winning_ordinal = winner.ordinal;
    let final_sql = winner.sql.clone();
    let final_outcome = winner.outcome.clone();
    phases.selection.add(started.elapsed(), 0);

    let interaction_count = reports
        .iter()
        .find(|r| r.ordinal == winning_ordinal)
        .map(|r| r.interaction_count)
        .unwrap_or(0);

    Ok(QuestionResult {
        final_sql,
        final_outcome,
        winning_ordinal,
        candidates: reports,
        phases,
        interaction_count,
    })
}

/// Lazily rendered contexts, one per granularity, shared across the
/// schedule.
#[derive(Default)]
struct ContextPair {
    complete: Option<MetadataContext>,
    partial: Option<MetadataContext>,
}

impl ContextPair {
    fn get(
        &mut self,
        mode: ContextMode,
        schema: &RawSchema,
        profile: &DatabaseProfile,
    ) -> Result<&MetadataContext, ProfilerError> {
        let slot = match mode {
            ContextMode::Complete => &mut self.complete,
            ContextMode::Partial => &mut self.partial,
        };
        if slot.is_none() {
            *slot = Some(render_context(schema, profile, mode)?);
        }
        Ok(slot.as_ref().expect("just rendered"))
    }
}
