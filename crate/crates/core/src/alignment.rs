//! Rule-guided SQL alignment.
//!
//! Two pluggable single-shot stages run after generation. Function
//! alignment normalizes function usage — it applies the session rules
//! plus a fixed check-rule catalog (no gratuitous value checks, one
//! standard date idiom, and so on) and accepts the model's rewrite only
//! if it parses and executes without failure. Output alignment then
//! trims the SELECT clause to exactly what the question asks for; an
//! AST diff rejects any edit that touches more than the outermost
//! select list.
//!
//! Both stages are fail-open: a gateway error, an unparseable reply, or
//! a rejected edit leaves the incoming SQL untouched, so disabling or
//! breaking alignment can never lose a query. The check-rule catalog
//! and the nine-example bank ship as editable plain-text assets and can
//! be replaced through configuration.

use std::fs;
use std::io;
use std::time::Duration;

use sqlparser::ast::{Query, SetExpr, Statement};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::config::AlignmentConfig;
use crate::dbcore::{DatabaseHandle, ExecState};
use crate::gateway::{complete, ChatMessage, ChatProvider};
use crate::generation::RuleSet;
use crate::prompts;

/// Built-in function-alignment check rules (editable catalog).
pub const DEFAULT_RULE_CATALOG: &str =
    include_str!("../assets/function_check_rules.txt");

/// Built-in nine-example bank for output alignment.
pub const DEFAULT_EXAMPLE_BANK: &str =
    include_str!("../assets/output_alignment_examples.txt");

/// The plain-text assets both stages prompt with.
#[derive(Debug, Clone)]
pub struct AlignmentAssets {
    pub rule_catalog: String,
    pub example_bank: String,
}

impl AlignmentAssets {
    pub fn defaults() -> Self {
        Self {
            rule_catalog: DEFAULT_RULE_CATALOG.to_string(),
            example_bank: DEFAULT_EXAMPLE_BANK.to_string(),
        }
    }

    /// Loads the configured override files, falling back to the built-in
    /// assets where no path is given.
    pub fn from_config(config: &AlignmentConfig) -> io::Result<Self> {
        let mut assets = Self::defaults();
        if let Some(path) = &config.rule_catalog {
            assets.rule_catalog = fs::read_to_string(path)?;
        }
        if let Some(path) = &config.example_bank {
            assets.example_bank = fs::read_to_string(path)?;
        }
        Ok(assets)
    }
}

/// What one alignment stage did to the query.
#[derive(Debug, Clone)]
pub struct AlignmentStage {
    /// The SQL leaving the stage (the incoming SQL when not applied).
    pub sql: String,
    /// Whether the model's rewrite passed the stage's guard.
    pub applied: bool,
    /// Tokens the stage's gateway call produced (0 when the call failed).
    pub output_tokens: u64,
}

impl AlignmentStage {
    fn unchanged(sql: &str, output_tokens: u64) -> Self {
        Self { sql: sql.to_string(), applied: false, output_tokens }
    }
}

/// Function alignment: one gateway call with the session rules and the
/// check-rule catalog. The rewrite is kept only if it parses and
/// executes without a Failure state; otherwise — including on gateway
/// errors — the incoming SQL passes through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn align_functions(
    provider: &dyn ChatProvider,
    db: &DatabaseHandle,
    question: &str,
    sql_g: &str,
    rules: &RuleSet,
    catalog: &str,
    temperature: f64,
    timeout: Duration,
    row_cap: u64,
) -> AlignmentStage {
    let prompt = prompts::function_alignment_prompt(
        &rules.rendered(),
        catalog,
        sql_g,
        question,
    );
    let Ok(completion) =
        complete(provider, &[ChatMessage::user(prompt)], temperature, &[])
    else {
        return AlignmentStage::unchanged(sql_g, 0);
    };
    let tokens = completion.output_tokens.unwrap_or(0);
    let Some(candidate) = extract_single_sql(&completion.text) else {
        return AlignmentStage::unchanged(sql_g, tokens);
    };
    if parse_query(&candidate).is_none() {
        return AlignmentStage::unchanged(sql_g, tokens);
    }
    let outcome = db.execute(&candidate, timeout, row_cap);
    if outcome.state == ExecState::Failure {
        return AlignmentStage::unchanged(sql_g, tokens);
    }
    AlignmentStage { sql: candidate, applied: true, output_tokens: tokens }
}

/// Output alignment: one gateway call with the example bank. The
/// rewrite is kept only if an AST diff shows that nothing outside the
/// outermost SELECT list changed; any other edit — or an unparseable
/// reply, or a gateway error — leaves the incoming SQL unchanged.
pub fn align_output(
    provider: &dyn ChatProvider,
    question: &str,
    sql_f: &str,
    examples: &str,
    temperature: f64,
) -> AlignmentStage {
    let prompt = prompts::output_alignment_prompt(examples, sql_f, question);
    let Ok(completion) =
        complete(provider, &[ChatMessage::user(prompt)], temperature, &[])
    else {
        return AlignmentStage::unchanged(sql_f, 0);
    };
    let tokens = completion.output_tokens.unwrap_or(0);
    let Some(candidate) = extract_single_sql(&completion.text) else {
        return AlignmentStage::unchanged(sql_f, tokens);
    };
    if !only_projection_differs(sql_f, &candidate) {
        return AlignmentStage::unchanged(sql_f, tokens);
    }
    AlignmentStage { sql: candidate, applied: true, output_tokens: tokens }
}

/// Pulls the single SQL statement out of a stage reply: the last fenced
/// block, else the bare trimmed text.
fn extract_single_sql(reply: &str) -> Option<String> {
    let blocks = prompts::extract_sql_blocks(reply);
    let candidate = blocks
        .last()
        .map(|b| b.trim().to_string())
        .unwrap_or_else(|| reply.trim().to_string());
    if candidate.is_empty() {
        None
    } else {
        Some(candidate)
    }
}

fn parse_query(sql: &str) -> Option<Query> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql).ok()?;
    statements.into_iter().find_map(|s| match s {
        Statement::Query(q) => Some(*q),
        _ => None,
    })
}

/// True when `candidate` parses and differs from `original` at most in
/// the outermost SELECT list. Compares the two ASTs with that list
/// blanked, so FROM, WHERE, GROUP BY, HAVING, ORDER BY, LIMIT, CTEs and
/// every subquery must be identical. Queries whose outermost body is a
/// set operation have no single select list to exempt, so they must
/// match exactly.
pub fn only_projection_differs(original: &str, candidate: &str) -> bool {
    let (Some(a), Some(b)) = (parse_query(original), parse_query(candidate))
    else {
        return false;
    };
    match (blank_projection(&a), blank_projection(&b)) {
        (Some(a), Some(b)) => a == b,
        _ => a == b,
    }
}

fn blank_projection(query: &Query) -> Option<Query> {
    let mut query = query.clone();
    match query.body.as_mut() {
        SetExpr::Select(select) => {
            select.projection.clear();
            Some(query)
        }
        _ => None,
    }
}
