//! Multi-granular candidate generation schedule and execution-result
//! majority voting.
//!
//! The pipeline runs one generation per schedule entry, varying the
//! metadata granularity (partial or complete context) and the sampling
//! temperature to diversify candidates. Candidates are then grouped by
//! equivalence of their execution results; the largest group wins and
//! its lowest-ordinal member becomes the final SQL. Failed executions
//! never vote, but empty and all-NULL results do — they are legitimate
//! execution results under the EX metric.

use std::cmp::Ordering;
use std::fs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SelectionConfig};
use crate::dbcore::{results_equivalent_with, CompareMode, ExecState, ExecutionOutcome};
use crate::profiler::ContextMode;

/// One scheduled generation: which context granularity to link against
/// and which temperature to sample at.
pub type ScheduleEntry = (ContextMode, f64);

/// One fully generated and aligned candidate, ready to vote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSql {
    /// Post-alignment SQL.
    pub sql: String,
    pub mode: ContextMode,
    pub temperature: f64,
    pub outcome: ExecutionOutcome,
    /// Generation index; unique within a question.
    pub ordinal: usize,
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no candidates to vote over")]
    NoCandidates,
}

/// Resolves the configured schedule.
///
/// `"default"` is four partial-context candidates at temperatures
/// {0.1, 0.4, 0.4, 1.0} followed by five complete-context candidates at
/// {0.1, 0.1, 0.4, 0.4, 1.0}; `"single"` is one complete-context
/// candidate at 0.1. Any other value names a JSON file holding a
/// non-empty array of `{"mode": "partial"|"complete", "temperature":
/// t}` entries.
pub fn candidate_schedule(
    config: &SelectionConfig,
) -> Result<Vec<ScheduleEntry>, ConfigError> {
    match config.schedule.as_str() {
        "default" => Ok(default_schedule()),
        "single" => Ok(vec![(ContextMode::Complete, 0.1)]),
        path => {
            #[derive(Deserialize)]
            struct Entry {
                mode: ContextMode,
                temperature: f64,
            }
            let text = fs::read_to_string(path).map_err(|e| {
                ConfigError::Invalid(format!(
                    "schedule `{path}` is neither default, single, nor a readable file: {e}"
                ))
            })?;
            let entries: Vec<Entry> =
                serde_json::from_str(&text).map_err(|e| {
                    ConfigError::Invalid(format!(
                        "schedule file `{path}` is malformed: {e}"
                    ))
                })?;
            if entries.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "schedule file `{path}` holds no entries"
                )));
            }
            Ok(entries
                .into_iter()
                .map(|e| (e.mode, e.temperature))
                .collect())
        }
    }
}

pub fn default_schedule() -> Vec<ScheduleEntry> {
    vec![
        (ContextMode::Partial, 0.1),
        (ContextMode::Partial, 0.4),
        (ContextMode::Partial, 0.4),
        (ContextMode::Partial, 1.0),
        (ContextMode::Complete, 0.1),
        (ContextMode::Complete, 0.1),
        (ContextMode::Complete, 0.4),
        (ContextMode::Complete, 0.4),
        (ContextMode::Complete, 1.0),
    ]
}

/// Majority vote over execution results.
///
/// Failure candidates are excluded up front; the survivors are grouped
/// by result equivalence and the largest group wins. Ties between
/// equally large groups break toward (1) the group containing a
/// complete-context candidate with the lowest temperature, then (2) the
/// group with the lowest member ordinal. The winning group's
/// lowest-ordinal member is returned. When every candidate failed, the
/// lowest-ordinal candidate is returned so the pipeline still emits
/// SQL.
pub fn vote(
    candidates: &[CandidateSql],
    mode: CompareMode,
) -> Result<&CandidateSql, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    let live: Vec<&CandidateSql> = candidates
        .iter()
        .filter(|c| c.outcome.state != ExecState::Failure)
        .collect();
    if live.is_empty() {
        return Ok(candidates
            .iter()
            .min_by_key(|c| c.ordinal)
            .expect("checked non-empty"));
    }

    let mut groups: Vec<Vec<&CandidateSql>> = Vec::new();
    for candidate in live {
        match groups
            .iter_mut()
            .find(|g| outcomes_equivalent(&g[0].outcome, &candidate.outcome, mode))
        {
            Some(group) => group.push(candidate),
            None => groups.push(vec![candidate]),
        }
    }

    let winner = groups
        .iter()
        .max_by(|a, b| prefer_group(a, b))
        .expect("at least one group");
    Ok(winner
        .iter()
        .min_by_key(|c| c.ordinal)
        .expect("groups are non-empty"))
}

/// Two non-Failure outcomes vote together when their result sets are
/// equivalent. A missing or truncated result set never groups with
/// anything, so such a candidate forms a singleton group.
fn outcomes_equivalent(
    a: &ExecutionOutcome,
    b: &ExecutionOutcome,
    mode: CompareMode,
) -> bool {
    match (&a.result, &b.result) {
        (Some(ra), Some(rb)) => {
            results_equivalent_with(ra, rb, mode).unwrap_or(false)
        }
        _ => false,
    }
}

/// Orders groups so that `max_by` yields the winner: larger first, then
/// the tie-break preferences.
fn prefer_group(a: &[&CandidateSql], b: &[&CandidateSql]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| match (complete_min_temp(a), complete_min_temp(b)) {
            // Lower temperature preferred, so a wins when its minimum
            // complete-mode temperature is the smaller one.
            (Some(ta), Some(tb)) => tb.total_cmp(&ta),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => Ordering::Equal,
        })
        .then_with(|| min_ordinal(b).cmp(&min_ordinal(a)))
}

fn complete_min_temp(group: &[&CandidateSql]) -> Option<f64> {
    group
        .iter()
        .filter(|c| c.mode == ContextMode::Complete)
        .map(|c| c.temperature)
        .min_by(f64::total_cmp)
}

fn min_ordinal(group: &[&CandidateSql]) -> usize {
    group.iter().map(|c| c.ordinal).min().expect("non-empty group")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbcore::{ResultSet, Value};
    use std::time::Duration;
    use tempfile::TempDir;

    fn outcome(state: ExecState, rows: Vec<Vec<i64>>) -> ExecutionOutcome {
        let result = (state != ExecState::Failure).then(|| {
            ResultSet::new(
                vec!["c".to_string()],
                rows.into_iter()
                    .map(|r| r.into_iter().map(Value::Integer).collect())
                    .collect(),
            )
        });
        ExecutionOutcome {
            state,
            result,
            error_message: None,
            elapsed: Duration::ZERO,
        }
    }

    fn candidate(
        ordinal: usize,
        mode: ContextMode,
        temperature: f64,
        state: ExecState,
        rows: Vec<Vec<i64>>,
    ) -> CandidateSql {
        CandidateSql {
            sql: format!("SELECT {ordinal}"),
            mode,
            temperature,
            outcome: outcome(state, rows),
            ordinal,
        }
    }

    // -- schedule -------------------------------------------------------

    #[test]
    fn default_schedule_is_four_partial_five_complete() {
        let schedule =
            candidate_schedule(&SelectionConfig::default()).unwrap();
        assert_eq!(schedule.len(), 9);
        let partial: Vec<f64> = schedule
            .iter()
            .filter(|(m, _)| *m == ContextMode::Partial)
            .map(|(_, t)| *t)
            .collect();
        let complete: Vec<f64> = schedule
            .iter()
            .filter(|(m, _)| *m == ContextMode::Complete)
            .map(|(_, t)| *t)
            .collect();
        assert_eq!(partial, vec![0.1, 0.4, 0.4, 1.0]);
        assert_eq!(complete, vec![0.1, 0.1, 0.4, 0.4, 1.0]);
    }

    #[test]
    fn single_schedule_is_one_complete_low_temp() {
        let config = SelectionConfig {
            schedule: "single".into(),
            ..SelectionConfig::default()
        };
        assert_eq!(
            candidate_schedule(&config).unwrap(),
            vec![(ContextMode::Complete, 0.1)]
        );
    }

    #[test]
    fn schedule_file_override_and_error_cases() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("schedule.json");
        std::fs::write(
            &path,
            r#"[{"mode": "partial", "temperature": 0.7}, {"mode": "complete", "temperature": 0.2}]"#,
        )
        .unwrap();
        let config = SelectionConfig {
            schedule: path.to_string_lossy().into_owned(),
            ..SelectionConfig::default()
        };
        assert_eq!(
            candidate_schedule(&config).unwrap(),
            vec![(ContextMode::Partial, 0.7), (ContextMode::Complete, 0.2)]
        );

        std::fs::write(&path, "[]").unwrap();
        assert!(matches!(
            candidate_schedule(&config),
            Err(ConfigError::Invalid(_))
        ));

        let config = SelectionConfig {
            schedule: "no-such-schedule".into(),
            ..SelectionConfig::default()
        };
        assert!(candidate_schedule(&config).is_err());
    }

    // -- voting ---------------------------------------------------------

    #[test]
    fn largest_group_wins() {
        let mut candidates = Vec::new();
        for i in 0..5 {
            candidates.push(candidate(
                i,
                ContextMode::Partial,
                1.0,
                ExecState::Success,
                vec![vec![42]],
            ));
        }
        candidates.push(candidate(
            5,
            ContextMode::Complete,
            0.1,
            ExecState::Success,
            vec![vec![7]],
        ));
        candidates.push(candidate(
            6,
            ContextMode::Complete,
            0.1,
            ExecState::Success,
            vec![vec![8]],
        ));
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 0);
    }

    #[test]
    fn failures_are_excluded_and_all_failure_falls_back() {
        let candidates = vec![
            candidate(2, ContextMode::Complete, 0.1, ExecState::Failure, vec![]),
            candidate(0, ContextMode::Partial, 0.4, ExecState::Failure, vec![]),
            candidate(1, ContextMode::Partial, 0.1, ExecState::Failure, vec![]),
        ];
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 0);

        // One live candidate beats any number of failures.
        let mut candidates = candidates;
        candidates.push(candidate(
            3,
            ContextMode::Partial,
            1.0,
            ExecState::Success,
            vec![vec![1]],
        ));
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 3);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            vote(&[], CompareMode::Set),
            Err(SelectionError::NoCandidates)
        ));
    }

    #[test]
    fn tie_breaks_toward_low_temperature_complete_group() {
        // Two groups of two. The {1, 3} group carries a Complete
        // candidate at 0.1; the {0, 2} group's Complete member runs
        // hotter, so ordinal order alone would pick the wrong group.
        let candidates = vec![
            candidate(0, ContextMode::Complete, 0.4, ExecState::Success, vec![vec![1]]),
            candidate(1, ContextMode::Partial, 1.0, ExecState::Success, vec![vec![2]]),
            candidate(2, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![1]]),
            candidate(3, ContextMode::Complete, 0.1, ExecState::Success, vec![vec![2]]),
        ];
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 1, "group with Complete@0.1 must win");

        // No Complete candidate anywhere: lowest member ordinal decides.
        let candidates = vec![
            candidate(0, ContextMode::Partial, 0.4, ExecState::Success, vec![vec![1]]),
            candidate(1, ContextMode::Partial, 0.4, ExecState::Success, vec![vec![2]]),
            candidate(2, ContextMode::Partial, 0.4, ExecState::Success, vec![vec![2]]),
            candidate(3, ContextMode::Partial, 0.4, ExecState::Success, vec![vec![1]]),
        ];
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 0);

        // A group with any Complete member beats an all-Partial group.
        let candidates = vec![
            candidate(0, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![1]]),
            candidate(1, ContextMode::Complete, 1.0, ExecState::Success, vec![vec![2]]),
        ];
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 1);
    }

    #[test]
    fn single_candidate_is_identity() {
        let candidates = vec![candidate(
            0,
            ContextMode::Complete,
            0.1,
            ExecState::Success,
            vec![vec![9]],
        )];
        assert_eq!(vote(&candidates, CompareMode::Set).unwrap().sql, "SELECT 0");
    }

    #[test]
    fn empty_and_none_results_do_vote() {
        // Two Empty results agree with each other and outvote one
        // Success.
        let candidates = vec![
            candidate(0, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![5]]),
            candidate(1, ContextMode::Partial, 0.4, ExecState::Empty, vec![]),
            candidate(2, ContextMode::Partial, 1.0, ExecState::Empty, vec![]),
        ];
        let winner = vote(&candidates, CompareMode::Set).unwrap();
        assert_eq!(winner.ordinal, 1);
    }

    #[test]
    fn vote_is_stable_under_permutation() {
        let mut candidates = vec![
            candidate(0, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![1]]),
            candidate(1, ContextMode::Complete, 0.1, ExecState::Success, vec![vec![2]]),
            candidate(2, ContextMode::Partial, 0.4, ExecState::Success, vec![vec![2]]),
            candidate(3, ContextMode::Complete, 0.4, ExecState::Success, vec![vec![1]]),
            candidate(4, ContextMode::Partial, 1.0, ExecState::Success, vec![vec![2]]),
        ];
        let baseline = vote(&candidates, CompareMode::Set).unwrap().sql.clone();
        candidates.reverse();
        assert_eq!(vote(&candidates, CompareMode::Set).unwrap().sql, baseline);
        candidates.swap(0, 3);
        candidates.swap(1, 4);
        assert_eq!(vote(&candidates, CompareMode::Set).unwrap().sql, baseline);
    }

    #[test]
    fn multiset_mode_splits_duplicate_sensitive_groups() {
        let a = candidate(0, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![1], vec![1]]);
        let b = candidate(1, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![1]]);
        let c = candidate(2, ContextMode::Partial, 0.1, ExecState::Success, vec![vec![1]]);
        let candidates = vec![a, b, c];
        // Set mode collapses duplicates: all three agree, lowest ordinal
        // represents.
        assert_eq!(vote(&candidates, CompareMode::Set).unwrap().ordinal, 0);
        // Multiset mode separates [1,1] from [1]: the pair wins.
        assert_eq!(vote(&candidates, CompareMode::Multiset).unwrap().ordinal, 1);
    }
}
