//! Pipeline configuration: a TOML file with every knob defaulted, so an
//! empty file (or no file) yields the standard setup.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("cannot parse config {0}: {1}")]
    Parse(PathBuf, toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Base URL of an OpenAI-compatible chat-completions endpoint.
    pub endpoint: String,
    pub name: String,
    /// Environment variable holding the API key.
    pub api_key_var: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            name: "gpt-4o".into(),
            api_key_var: "MCI_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitsConfig {
    /// Rows of a successful result echoed back as execution feedback.
    pub feedback_rows: usize,
    /// Model turns per chained generation session.
    pub max_rounds: usize,
    /// Attempts to obtain a parseable draft SQL.
    pub draft_retries: usize,
    pub statement_timeout_secs: u64,
    /// Row materialization cap for pipeline-internal executions.
    pub internal_row_cap: usize,
    /// Safety cap when counting rows for EX scoring.
    pub scoring_count_cap: u64,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            feedback_rows: 5,
            max_rounds: 6,
            draft_retries: 3,
            statement_timeout_secs: 30,
            internal_row_cap: 500,
            scoring_count_cap: 1_000_000,
        }
    }
}

impl LimitsConfig {
    pub fn statement_timeout(&self) -> Duration {
        Duration::from_secs(self.statement_timeout_secs)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilingConfig {
    /// Seed for value sampling and pattern mining (reproducible profiles).
    pub sampling_seed: u64,
    /// Values sampled per non-numeric column for pattern mining.
    pub pattern_sample_cap: usize,
    /// Distinct values indexed per column, most frequent first.
    pub index_value_cap: usize,
    /// Cosine threshold for similar-column candidates.
    pub similarity_threshold: f64,
    /// Representative values rendered per column.
    pub examples_per_column: usize,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        Self {
            sampling_seed: 42,
            pattern_sample_cap: 200,
            index_value_cap: 50_000,
            similarity_threshold: 0.4,
            examples_per_column: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub function_alignment: bool,
    pub output_alignment: bool,
    /// Replacement for the built-in function check-rule catalog.
    pub rule_catalog: Option<PathBuf>,
    /// Replacement for the built-in output-alignment example bank.
    pub example_bank: Option<PathBuf>,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            function_alignment: true,
            output_alignment: true,
            rule_catalog: None,
            example_bank: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// "default" (9 candidates), "single", or a path to a schedule file.
    pub schedule: String,
    /// Compare results as multisets instead of sets.
    pub strict_multiset: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { schedule: "default".into(), strict_multiset: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Benchmark worker-pool width.
    pub workers: usize,
    /// Few-shot cases retrieved per question.
    pub few_shot_k: usize,
    /// Optional few-shot store file (newline-delimited JSON records).
    pub few_shot_store: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { workers: 1, few_shot_k: 3, few_shot_store: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub limits: LimitsConfig,
    pub profiling: ProfilingConfig,
    pub alignment: AlignmentConfig,
    pub selection: SelectionConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let config: Config =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.limits.max_rounds == 0 {
            return Err(ConfigError::Invalid("limits.max_rounds must be ≥ 1".into()));
        }
        if self.limits.draft_retries == 0 {
            return Err(ConfigError::Invalid("limits.draft_retries must be ≥ 1".into()));
        }
        if self.limits.internal_row_cap == 0 {
            return Err(ConfigError::Invalid("limits.internal_row_cap must be ≥ 1".into()));
        }
        if self.profiling.similarity_threshold < 0.0 {
            return Err(ConfigError::Invalid(
                "profiling.similarity_threshold must be ≥ 0 (values > 1 disable the stage)".into(),
            ));
        }
        if self.run.workers == 0 {
            return Err(ConfigError::Invalid("run.workers must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_all_defaults() {
        let config: Config = toml::from_str("").unwrap();
        assert_eq!(config.limits.feedback_rows, 5);
        assert_eq!(config.limits.max_rounds, 6);
        assert_eq!(config.limits.draft_retries, 3);
        assert_eq!(config.limits.statement_timeout_secs, 30);
        assert_eq!(config.limits.internal_row_cap, 500);
        assert_eq!(config.limits.scoring_count_cap, 1_000_000);
        assert_eq!(config.profiling.sampling_seed, 42);
        assert_eq!(config.profiling.pattern_sample_cap, 200);
        assert_eq!(config.profiling.index_value_cap, 50_000);
        assert!((config.profiling.similarity_threshold - 0.4).abs() < 1e-12);
        assert!(config.alignment.function_alignment);
        assert!(config.alignment.output_alignment);
        assert_eq!(config.selection.schedule, "default");
        assert!(!config.selection.strict_multiset);
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let config: Config =
            toml::from_str("[limits]\nfeedback_rows = 10\n").unwrap();
        assert_eq!(config.limits.feedback_rows, 10);
        assert_eq!(config.limits.max_rounds, 6);
    }

    #[test]
    fn zero_rounds_rejected() {
        let config: Config = toml::from_str("[limits]\nmax_rounds = 0\n").unwrap();
        assert!(config.validate().is_err());
    }
}
