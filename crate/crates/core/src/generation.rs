//! Intermediate-correction SQL generation.
//!
//! One chained model session turns the draft SQL into the generated SQL
//! `sql_g`. The session opens with a semantic check of the draft (step 1,
//! answered YES or NO), branches into polishing or rewriting, and then
//! alternates model turns with framework injections: every SQL the model
//! emits is executed against the live database, the execution outcome is
//! classified, and the matching correction instruction is injected back
//! into the conversation. The model signals completion with a tagged
//! final-SQL block; a round budget bounds the session.
//!
//! The module also hosts the few-shot case store (skeleton-masked question
//! retrieval), the column dependency tool the model can call mid-session,
//! and the deterministic rule extractor that distills the session's
//! execution history into alignment rules.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, Query, Select, SetExpr, Statement, TableFactor, TableWithJoins,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::dbcore::{DatabaseHandle, ExecState, ExecutionOutcome, RawSchema};
use crate::gateway::{
    complete, ChatProvider, ChatTranscript, GatewayError, InjectionKind,
};
use crate::profiler::{
    bm25_scores, classify_cardinality, Cardinality, InterColumnRelation,
    RelationKind,
};
use crate::prompts::{
    self, FINAL_SQL_TAG, STOP_MARKER, YESNO_REPROMPT,
};
use crate::util::tokenize;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("column `{table}`.`{column}` is not in the schema")]
    UnknownColumn { table: String, column: String },
}

// ---------------------------------------------------------------------------
// Few-shot cases
// ---------------------------------------------------------------------------

/// One stored question/SQL pair used as an in-prompt example.
///
/// The skeleton is derived deterministically from the question by masking
/// volatile tokens, so that retrieval matches questions by shape rather
/// than by surface values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotCase {
    pub question: String,
    pub sql: String,
    pub skeleton: String,
}

impl FewShotCase {
    /// Builds a case, masking the question against `schema` when the
    /// source database's schema is available.
    pub fn new(
        question: impl Into<String>,
        sql: impl Into<String>,
        schema: Option<&RawSchema>,
    ) -> Self {
        let question = question.into();
        let skeleton = mask_question(&question, schema);
        Self { question, sql: sql.into(), skeleton }
    }
}

/// Masks a natural-language question into its skeleton: numbers become
/// `<NUM>`, quoted strings become `<STR>`, and tokens naming a table or
/// column of `schema` become `<COL>`. Everything else is lowercased.
pub fn mask_question(question: &str, schema: Option<&RawSchema>) -> String {
    let schema_terms: BTreeSet<String> = schema
        .map(|s| {
            s.tables
                .iter()
                .flat_map(|t| {
                    std::iter::once(t.name.to_lowercase())
                        .chain(t.columns.iter().map(|c| c.name.to_lowercase()))
                })
                .collect()
        })
        .unwrap_or_default();

    let mut out: Vec<String> = Vec::new();
    let mut rest = question;
    while !rest.is_empty() {
        // Quoted spans mask as one <STR> regardless of their content.
        if let Some((quote_len, _)) = leading_quote(rest) {
            out.push("<STR>".to_string());
            rest = &rest[quote_len..];
            continue;
        }
        let mut chars = rest.char_indices();
        let (_, first) = chars.next().expect("non-empty");
        if first.is_whitespace() {
            rest = rest.trim_start();
            continue;
        }
        // Take one whitespace-delimited word that contains no quote start.
        let end = rest
            .char_indices()
            .find(|&(_, ch)| ch.is_whitespace() || ch == '"' || ch == '\'')
            .map(|(i, _)| i.max(first.len_utf8()))
            .unwrap_or(rest.len());
        let word = &rest[..end];
        rest = &rest[end..];
        out.push(mask_word(word, &schema_terms));
    }
    out.join(" ")
}

/// Returns the byte length of a leading quoted span (`'...'` or `"..."`)
/// and its inner text, if `s` starts with a quote. An unterminated quote
/// swallows the remainder of the string.
fn leading_quote(s: &str) -> Option<(usize, &str)> {
    let quote = s.chars().next()?;
    if quote != '\'' && quote != '"' {
        return None;
    }
    match s[1..].find(quote) {
        Some(pos) => Some((pos + 2, &s[1..pos + 1])),
        None => Some((s.len(), &s[1..])),
    }
}

fn mask_word(word: &str, schema_terms: &BTreeSet<String>) -> String {
    let core = word.trim_matches(|c: char| !c.is_alphanumeric() && c != '.' && c != '-');
    if !core.is_empty() && core.trim_start_matches('-').parse::<f64>().is_ok() {
        return "<NUM>".to_string();
    }
    let bare = word.trim_matches(|c: char| !c.is_alphanumeric());
    if !bare.is_empty() && schema_terms.contains(&bare.to_lowercase()) {
        return "<COL>".to_string();
    }
    word.to_lowercase()
}

/// Loads a few-shot store from newline-delimited JSON records
/// (`{"question": ..., "sql": ...}`). Blank lines are skipped; a
/// malformed record is an error.
pub fn load_few_shot_store(path: &Path) -> io::Result<Vec<FewShotCase>> {
    #[derive(Deserialize)]
    struct Record {
        question: String,
        sql: String,
    }
    let text = fs::read_to_string(path)?;
    let mut cases = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), lineno + 1),
            )
        })?;
        cases.push(FewShotCase::new(record.question, record.sql, None));
    }
    Ok(cases)
}

/// Ranks the store's skeletons against the masked incoming question with
/// BM25 and returns the top `k` cases. Ties keep store order.
pub fn retrieve_similar_cases(
    store: &[FewShotCase],
    question: &str,
    schema: Option<&RawSchema>,
    k: usize,
) -> Vec<FewShotCase> {
    if store.is_empty() || k == 0 {
        return Vec::new();
    }
    let query = tokenize(&mask_question(question, schema));
    let docs: Vec<Vec<String>> =
        store.iter().map(|c| tokenize(&c.skeleton)).collect();
    let scores = bm25_scores(&docs, &query);
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.into_iter().take(k).map(|i| store[i].clone()).collect()
}

/// Renders retrieved cases for the `# Examples:` prompt section.
pub fn render_cases(cases: &[FewShotCase]) -> String {
    let mut out = String::new();
    for case in cases {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Question: ");
        out.push_str(&case.question);
        out.push_str("\nSQL: ");
        out.push_str(&case.sql);
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Semantic check
// ---------------------------------------------------------------------------

/// Step-1 verdict on the draft SQL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Yes => write!(f, "YES"),
            Verdict::No => write!(f, "NO"),
        }
    }
}

/// Finds the verdict in a model reply: the last standalone uppercase
/// `YES` or `NO` token wins, so a reply may reason freely before
/// committing.
pub fn parse_verdict(text: &str) -> Option<Verdict> {
    let mut verdict = None;
    for token in text.split(|c: char| !c.is_ascii_alphanumeric()) {
        match token {
            "YES" => verdict = Some(Verdict::Yes),
            "NO" => verdict = Some(Verdict::No),
            _ => {}
        }
    }
    verdict
}

/// Runs step 1 of the generation session: presents the draft and asks
/// whether it answers the question, halting generation at the stop
/// marker. An unreadable reply earns one reprompt; after that the
/// verdict defaults to NO, which routes into the conservative rewrite
/// branch.
///
/// Returns the verdict together with the open transcript so the session
/// can continue from it.
pub fn semantic_check(
    provider: &dyn ChatProvider,
    question: &str,
    schema_text: &str,
    sql_d: &str,
    cases_text: &str,
    temperature: f64,
) -> Result<(Verdict, ChatTranscript), GenerationError> {
    let mut transcript = ChatTranscript::new();
    transcript.push_user(prompts::generation_prompt(
        schema_text,
        question,
        sql_d,
        cases_text,
    ));
    let stops = vec![STOP_MARKER.to_string()];
    let completion =
        complete(provider, transcript.messages(), temperature, &stops)?;
    transcript.add_output_tokens(completion.output_tokens.unwrap_or(0));
    transcript.push_assistant(completion.text);
    if let Some(verdict) = parse_verdict(transcript.last_assistant().unwrap_or(""))
    {
        return Ok((verdict, transcript));
    }
    transcript.push_injection(InjectionKind::Reprompt, YESNO_REPROMPT);
    let completion =
        complete(provider, transcript.messages(), temperature, &stops)?;
    transcript.add_output_tokens(completion.output_tokens.unwrap_or(0));
    transcript.push_assistant(completion.text);
    let verdict = parse_verdict(transcript.last_assistant().unwrap_or(""))
        .unwrap_or(Verdict::No);
    Ok((verdict, transcript))
}

// ---------------------------------------------------------------------------
// Dependency tool
// ---------------------------------------------------------------------------

/// Answers a mid-session `DEPENDENCY: table.column` request with the
/// recorded inter-column facts for that column, phrased for cardinality
/// reasoning (does selecting this column need DISTINCT?).
pub fn dependency_tool(
    schema: &RawSchema,
    relations: &[InterColumnRelation],
    table: &str,
    column: &str,
) -> Result<String, GenerationError> {
    let table_def = schema
        .table(table)
        .ok_or_else(|| GenerationError::UnknownColumn {
            table: table.to_string(),
            column: column.to_string(),
        })?;
    if table_def.column(column).is_none() {
        return Err(GenerationError::UnknownColumn {
            table: table.to_string(),
            column: column.to_string(),
        });
    }

    let mut lines = Vec::new();
    for rel in relations {
        let (this, partner, fd_this, fd_partner) = if rel.a.table.eq_ignore_ascii_case(table)
            && rel.a.column.eq_ignore_ascii_case(column)
        {
            (&rel.a, &rel.b, rel.fd_ab, rel.fd_ba)
        } else if rel.b.table.eq_ignore_ascii_case(table)
            && rel.b.column.eq_ignore_ascii_case(column)
        {
            (&rel.b, &rel.a, rel.fd_ba, rel.fd_ab)
        } else {
            continue;
        };
        match rel.kind {
            RelationKind::Dependency => {
                if let Some(line) =
                    dependency_line(this, partner, fd_this, fd_partner)
                {
                    lines.push(line);
                }
            }
            RelationKind::Duplicate => lines.push(format!(
                "- `{}`.`{}` holds the same values as `{}`.`{}`.",
                this.table, this.column, partner.table, partner.column
            )),
            RelationKind::Similar => lines.push(format!(
                "- `{}`.`{}` holds values similar to `{}`.`{}`.",
                this.table, this.column, partner.table, partner.column
            )),
        }
    }
    if lines.is_empty() {
        return Ok(format!(
            "`{}`.`{}` has no recorded dependencies.",
            table_def.name, column
        ));
    }
    let mut out = format!(
        "Dependency facts for `{}`.`{}`:\n{}",
        table_def.name,
        column,
        lines.join("\n")
    );
    out.push_str(
        "\nA column on the many side of a dependency repeats across rows; \
use DISTINCT when the question asks for unique values.",
    );
    Ok(out)
}

/// Phrases one functional-dependency pair from the requested column's
/// point of view. `fd_this` means this column determines the partner.
fn dependency_line(
    this: &crate::dbcore::ColumnRef,
    partner: &crate::dbcore::ColumnRef,
    fd_this: Option<bool>,
    fd_partner: Option<bool>,
) -> Option<String> {
    let (fd_this, fd_partner) = (fd_this?, fd_partner?);
    let line = match classify_cardinality(fd_this, fd_partner) {
        Cardinality::OneToOne => format!(
            "- `{}`.`{}` and `{}`.`{}` are 1:1 — each value maps to exactly one partner value and vice versa.",
            this.table, this.column, partner.table, partner.column
        ),
        // This column determines the partner but not the reverse: many
        // of this column's values share one partner value.
        Cardinality::NToOne => format!(
            "- `{}`.`{}` to `{}`.`{}` is N:1 — `{}` is the many side; each `{}` value maps to exactly one `{}` value.",
            this.table, this.column, partner.table, partner.column,
            this.column, this.column, partner.column
        ),
        Cardinality::OneToN => format!(
            "- `{}`.`{}` to `{}`.`{}` is 1:N — `{}` is the many side; the same `{}` value recurs across rows with different `{}` values.",
            this.table, this.column, partner.table, partner.column,
            partner.column, this.column, partner.column
        ),
        Cardinality::NToM => format!(
            "- `{}`.`{}` and `{}`.`{}` are N:M — the values vary independently.",
            this.table, this.column, partner.table, partner.column
        ),
        Cardinality::Unknown => return None,
    };
    Some(line)
}

/// Parses `DEPENDENCY: table.column` request lines out of a model reply.
fn parse_dependency_requests(text: &str) -> Vec<(String, String)> {
    let mut requests = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("DEPENDENCY:") else {
            continue;
        };
        let rest = rest.trim();
        if let Some((table, column)) = rest.split_once('.') {
            let strip =
                |s: &str| s.trim().trim_matches(|c| c == '`' || c == '"').to_string();
            let table = strip(table);
            let column = strip(column);
            if !table.is_empty() && !column.is_empty() {
                requests.push((table, column));
            }
        }
    }
    requests
}

// ---------------------------------------------------------------------------
// Generation session
// ---------------------------------------------------------------------------

/// Which step-2 branch the session took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// YES verdict: keep the draft's intent, fix minor errors.
    Polish,
    /// NO verdict: decompose the question and rebuild the query.
    Rewrite,
}

/// Everything `run_generation` needs besides the provider and database.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub question: &'a str,
    /// Rendered filtered-schema text (already serialized for the prompt).
    pub schema_text: &'a str,
    pub sql_d: &'a str,
    /// Pre-rendered `# Examples:` section body; empty omits the section.
    pub cases_text: &'a str,
    pub schema: &'a RawSchema,
    pub relations: &'a [InterColumnRelation],
    pub temperature: f64,
    pub max_rounds: usize,
    pub feedback_rows: usize,
    pub statement_timeout: Duration,
    pub row_cap: u64,
}

/// Result of one generation session.
#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub sql_g: String,
    pub transcript: ChatTranscript,
    pub branch: Branch,
    /// Number of database executor invocations made during the session.
    pub interaction_count: usize,
    /// Every distinct SQL the session executed, with its outcome, in
    /// execution order.
    pub executed: Vec<(String, ExecutionOutcome)>,
    /// Rules distilled from the session's execution history.
    pub rules: RuleSet,
}

/// Drives the full generation session for one candidate.
///
/// After the semantic check, the branch instruction is injected and the
/// loop begins. Each model turn is handled by precedence:
///
/// 1. a tagged final SQL ends the session (the final SQL is executed
///    unless the session already executed that exact statement);
/// 2. `DEPENDENCY:` request lines are answered with a tool-result
///    injection;
/// 3. a fenced SQL block is executed and the outcome-matched correction
///    instruction is injected;
/// 4. otherwise, if the latest executed SQL succeeded the session ends
///    on it, else the model is reprompted for a query.
///
/// The provider-call budget is `max_rounds`. On exhaustion the session
/// keeps the best SQL seen so far: the last Success, else the last
/// NoneValued, else the last Empty, else the last SQL emitted at all,
/// else the draft.
pub fn run_generation(
    provider: &dyn ChatProvider,
    db: &DatabaseHandle,
    request: &GenerationRequest,
) -> Result<GenerationOutcome, GenerationError> {
    let max_rounds = request.max_rounds.max(1);
    let (verdict, mut transcript) = semantic_check(
        provider,
        request.question,
        request.schema_text,
        request.sql_d,
        request.cases_text,
        request.temperature,
    )?;
    let branch = match verdict {
        Verdict::Yes => Branch::Polish,
        Verdict::No => Branch::Rewrite,
    };

    let mut executed: Vec<(String, ExecutionOutcome)> = Vec::new();
    let mut outcome_cache: HashMap<String, ExecutionOutcome> = HashMap::new();
    let mut last_sql: Option<String> = None;
    let execute = |sql: &str,
                       executed: &mut Vec<(String, ExecutionOutcome)>,
                       cache: &mut HashMap<String, ExecutionOutcome>|
     -> ExecutionOutcome {
        let key = sql.trim().to_string();
        if let Some(hit) = cache.get(&key) {
            return hit.clone();
        }
        let outcome =
            db.execute(sql, request.statement_timeout, request.row_cap);
        cache.insert(key, outcome.clone());
        executed.push((sql.to_string(), outcome.clone()));
        outcome
    };

    // The branch instruction needs at least one answering round; with a
    // budget of one provider call the session ends on the draft.
    if transcript.assistant_turns() >= max_rounds {
        let (sql_g, rules) =
            settle(&executed, last_sql.as_deref(), request.sql_d);
        return Ok(GenerationOutcome {
            sql_g,
            transcript,
            branch,
            interaction_count: executed.len(),
            executed,
            rules,
        });
    }
    match branch {
        Branch::Polish => transcript
            .push_injection(InjectionKind::BranchPolish, prompts::polish_instruction()),
        Branch::Rewrite => transcript
            .push_injection(InjectionKind::BranchRewrite, prompts::rewrite_instruction()),
    }

    let final_sql = loop {
        let completion = complete(
            provider,
            transcript.messages(),
            request.temperature,
            &[],
        )?;
        transcript.add_output_tokens(completion.output_tokens.unwrap_or(0));
        transcript.push_assistant(completion.text);
        let reply = transcript.last_assistant().unwrap_or("").to_string();

        if reply.contains(FINAL_SQL_TAG) {
            let sql = prompts::extract_final_sql(&reply)
                .or_else(|| last_sql.clone())
                .unwrap_or_else(|| request.sql_d.to_string());
            execute(&sql, &mut executed, &mut outcome_cache);
            break sql;
        }

        let budget_left = transcript.assistant_turns() < max_rounds;

        let requests = parse_dependency_requests(&reply);
        if !requests.is_empty() {
            if !budget_left {
                break settle_sql(&executed, last_sql.as_deref(), request.sql_d);
            }
            let answers: Vec<String> = requests
                .iter()
                .map(|(t, c)| {
                    dependency_tool(request.schema, request.relations, t, c)
                        .unwrap_or_else(|e| e.to_string())
                })
                .collect();
            transcript
                .push_injection(InjectionKind::ToolResult, answers.join("\n\n"));
            continue;
        }

        if let Some(sql) = prompts::extract_sql_blocks(&reply).last() {
            let sql = sql.to_string();
            let outcome = execute(&sql, &mut executed, &mut outcome_cache);
            last_sql = Some(sql.clone());
            if !budget_left {
                break settle_sql(&executed, last_sql.as_deref(), request.sql_d);
            }
            let kind = match outcome.state {
                ExecState::Success => InjectionKind::CorrectionSuccess,
                ExecState::NoneValued => InjectionKind::CorrectionNone,
                ExecState::Empty => InjectionKind::CorrectionEmpty,
                ExecState::Failure => InjectionKind::CorrectionFailure,
            };
            transcript.push_injection(
                kind,
                prompts::correction_instruction(
                    &outcome,
                    &sql,
                    request.feedback_rows,
                ),
            );
            continue;
        }

        // No tag, no tool request, no SQL. A reply that stops producing
        // queries after a Success is taken as sign-off on that query.
        if let Some((sql, outcome)) = executed.last() {
            if outcome.state == ExecState::Success {
                break sql.clone();
            }
        }
        if !budget_left {
            break settle_sql(&executed, last_sql.as_deref(), request.sql_d);
        }
        transcript.push_injection(
            InjectionKind::Reprompt,
            format!(
                "Continue. Emit the next SQL query in a fenced sql block, or \
output `{FINAL_SQL_TAG}` followed by the final query."
            ),
        );
    };

    let rules = extract_rules(&executed, &final_sql);
    Ok(GenerationOutcome {
        sql_g: final_sql,
        transcript,
        branch,
        interaction_count: executed.len(),
        executed,
        rules,
    })
}

/// Best-so-far choice on budget exhaustion.
fn settle_sql(
    executed: &[(String, ExecutionOutcome)],
    last_emitted: Option<&str>,
    sql_d: &str,
) -> String {
    for wanted in [ExecState::Success, ExecState::NoneValued, ExecState::Empty] {
        if let Some((sql, _)) =
            executed.iter().rev().find(|(_, o)| o.state == wanted)
        {
            return sql.clone();
        }
    }
    last_emitted.map(str::to_string).unwrap_or_else(|| sql_d.to_string())
}

fn settle(
    executed: &[(String, ExecutionOutcome)],
    last_emitted: Option<&str>,
    sql_d: &str,
) -> (String, RuleSet) {
    let sql = settle_sql(executed, last_emitted, sql_d);
    let rules = extract_rules(executed, &sql);
    (sql, rules)
}

// ---------------------------------------------------------------------------
// Rule extraction
// ---------------------------------------------------------------------------

/// Rules distilled from a generation session, later rendered into the
/// alignment prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    /// Predicates every successful query kept and whose absence produced
    /// an empty result: they are load-bearing and must survive alignment.
    pub condition_rules: Vec<String>,
    /// Tables every successful query drew from.
    pub table_rules: Vec<String>,
    /// Predicates that appeared only in empty-result attempts: they must
    /// not be reintroduced.
    pub negative_constraints: Vec<String>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.condition_rules.is_empty()
            && self.table_rules.is_empty()
            && self.negative_constraints.is_empty()
    }

    /// Renders the rules as the numbered list the alignment prompt
    /// expects.
    pub fn rendered(&self) -> String {
        let mut items = Vec::new();
        for p in &self.condition_rules {
            items.push(format!(
                "The query must keep the condition `{p}`; without it the result was empty."
            ));
        }
        for t in &self.table_rules {
            items.push(format!("The query must use the table `{t}`."));
        }
        for p in &self.negative_constraints {
            items.push(format!(
                "Do not add the condition `{p}`; it produced an empty result."
            ));
        }
        if items.is_empty() {
            return "(none)".to_string();
        }
        items
            .iter()
            .enumerate()
            .map(|(i, item)| format!("({}) {item}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Distills a session's execution history into rules. Deterministic and
/// purely set-based, so reordering the executed list cannot change the
/// result:
///
/// * condition rules: predicates present in every Success query, where
///   some executed removal variant — an Empty-result query built only
///   from predicates the successful queries also used — lacks the
///   predicate. The variant restriction keeps unrelated failed attempts
///   from promoting every surviving predicate;
/// * table rules: tables present in every Success query;
/// * negative constraints: predicates of Empty-result queries that the
///   final SQL does not carry.
///
/// Predicates are compared as normalized fragments: identifiers and
/// keywords case-folded, string literals preserved.
pub fn extract_rules(
    executed: &[(String, ExecutionOutcome)],
    final_sql: &str,
) -> RuleSet {
    let mut success_predicates: Vec<BTreeSet<String>> = Vec::new();
    let mut success_tables: Vec<BTreeSet<String>> = Vec::new();
    let mut empty_predicates: Vec<BTreeSet<String>> = Vec::new();
    for (sql, outcome) in executed {
        match outcome.state {
            ExecState::Success => {
                if let Some(parsed) = parse_first_query(sql) {
                    success_predicates.push(query_predicates(&parsed));
                    success_tables.push(query_tables(&parsed));
                }
            }
            ExecState::Empty => {
                if let Some(parsed) = parse_first_query(sql) {
                    empty_predicates.push(query_predicates(&parsed));
                }
            }
            _ => {}
        }
    }

    let shared_predicates = intersect_all(&success_predicates);
    let table_rules: Vec<String> =
        intersect_all(&success_tables).into_iter().collect();

    let success_union: BTreeSet<String> =
        success_predicates.iter().flatten().cloned().collect();
    let condition_rules: Vec<String> = shared_predicates
        .iter()
        .filter(|p| {
            empty_predicates.iter().any(|variant| {
                !variant.contains(*p) && variant.is_subset(&success_union)
            })
        })
        .cloned()
        .collect();

    let final_predicates = parse_first_query(final_sql)
        .map(|q| query_predicates(&q))
        .unwrap_or_default();
    let negative_constraints: Vec<String> = empty_predicates
        .iter()
        .flatten()
        .filter(|p| !final_predicates.contains(*p))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    RuleSet { condition_rules, table_rules, negative_constraints }
}

fn intersect_all(sets: &[BTreeSet<String>]) -> BTreeSet<String> {
    let mut iter = sets.iter();
    let Some(first) = iter.next() else {
        return BTreeSet::new();
    };
    iter.fold(first.clone(), |acc, s| &acc & s)
}

fn parse_first_query(sql: &str) -> Option<Query> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql).ok()?;
    statements.into_iter().find_map(|s| match s {
        Statement::Query(q) => Some(*q),
        _ => None,
    })
}

/// Collects the normalized conjuncts of every WHERE and HAVING clause in
/// the query, including subqueries reachable through set operations and
/// CTEs.
fn query_predicates(query: &Query) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_query_predicates(query, &mut out);
    out
}

fn collect_query_predicates(query: &Query, out: &mut BTreeSet<String>) {
    if let Some(with) = &query.with {
        for cte in &with.cte_tables {
            collect_query_predicates(&cte.query, out);
        }
    }
    collect_set_expr_predicates(&query.body, out);
}

fn collect_set_expr_predicates(body: &SetExpr, out: &mut BTreeSet<String>) {
    match body {
        SetExpr::Select(select) => collect_select_predicates(select, out),
        SetExpr::Query(query) => collect_query_predicates(query, out),
        SetExpr::SetOperation { left, right, .. } => {
            collect_set_expr_predicates(left, out);
            collect_set_expr_predicates(right, out);
        }
        _ => {}
    }
}

fn collect_select_predicates(select: &Select, out: &mut BTreeSet<String>) {
    if let Some(selection) = &select.selection {
        collect_conjuncts(selection, out);
    }
    if let Some(having) = &select.having {
        collect_conjuncts(having, out);
    }
    for twj in &select.from {
        collect_factor_predicates(&twj.relation, out);
        for join in &twj.joins {
            collect_factor_predicates(&join.relation, out);
        }
    }
}

fn collect_factor_predicates(factor: &TableFactor, out: &mut BTreeSet<String>) {
    match factor {
        TableFactor::Derived { subquery, .. } => {
            collect_query_predicates(subquery, out)
        }
        TableFactor::NestedJoin { table_with_joins, .. } => {
            collect_factor_predicates(&table_with_joins.relation, out);
            for join in &table_with_joins.joins {
                collect_factor_predicates(&join.relation, out);
            }
        }
        _ => {}
    }
}

/// Splits an AND tree into leaf conjuncts and normalizes each.
fn collect_conjuncts(expr: &Expr, out: &mut BTreeSet<String>) {
    match expr {
        Expr::BinaryOp { left, op, right }
            if *op == sqlparser::ast::BinaryOperator::And =>
        {
            collect_conjuncts(left, out);
            collect_conjuncts(right, out);
        }
        Expr::Nested(inner) => collect_conjuncts(inner, out),
        other => {
            out.insert(normalize_fragment(&other.to_string()));
        }
    }
}

/// Case-folds a rendered SQL fragment outside of single-quoted string
/// literals, and normalizes whitespace. Identifier quoting characters
/// are dropped so `"Title"` and `Title` compare equal.
fn normalize_fragment(fragment: &str) -> String {
    let mut out = String::with_capacity(fragment.len());
    let mut in_string = false;
    for ch in fragment.chars() {
        if ch == '\'' {
            in_string = !in_string;
            out.push(ch);
        } else if in_string {
            out.push(ch);
        } else if ch == '"' || ch == '`' {
            // skip identifier quotes
        } else {
            out.extend(ch.to_lowercase());
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Collects the real table names (lowercased) a query reads from,
/// excluding CTE aliases defined by the query itself.
fn query_tables(query: &Query) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut ctes = BTreeSet::new();
    collect_query_tables(query, &mut ctes, &mut out);
    out
}

fn collect_query_tables(
    query: &Query,
    ctes: &mut BTreeSet<String>,
    out: &mut BTreeSet<String>,
) {
    if let Some(with) = &query.with {
        for cte in &with.cte_tables {
            collect_query_tables(&cte.query, ctes, out);
            ctes.insert(cte.alias.name.value.to_lowercase());
        }
    }
    collect_set_expr_tables(&query.body, ctes, out);
}

fn collect_set_expr_tables(
    body: &SetExpr,
    ctes: &mut BTreeSet<String>,
    out: &mut BTreeSet<String>,
) {
    match body {
        SetExpr::Select(select) => {
            for twj in &select.from {
                collect_twj_tables(twj, ctes, out);
            }
        }
        SetExpr::Query(query) => collect_query_tables(query, ctes, out),
        SetExpr::SetOperation { left, right, .. } => {
            collect_set_expr_tables(left, ctes, out);
            collect_set_expr_tables(right, ctes, out);
        }
        _ => {}
    }
}

fn collect_twj_tables(
    twj: &TableWithJoins,
    ctes: &mut BTreeSet<String>,
    out: &mut BTreeSet<String>,
) {
    collect_factor_tables(&twj.relation, ctes, out);
    for join in &twj.joins {
        collect_factor_tables(&join.relation, ctes, out);
    }
}

fn collect_factor_tables(
    factor: &TableFactor,
    ctes: &mut BTreeSet<String>,
    out: &mut BTreeSet<String>,
) {
    match factor {
        TableFactor::Table { name, .. } => {
            let last = name
                .0
                .last()
                .map(|part| part.value.to_lowercase())
                .unwrap_or_default();
            if !last.is_empty() && !ctes.contains(&last) {
                out.insert(last);
            }
        }
        TableFactor::Derived { subquery, .. } => {
            collect_query_tables(subquery, ctes, out)
        }
        TableFactor::NestedJoin { table_with_joins, .. } => {
            collect_twj_tables(table_with_joins, ctes, out)
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbcore::open_database;
    use crate::gateway::{MockProvider, Role};
    use rusqlite::Connection;
    use std::path::PathBuf;
    use tempfile::TempDir;

    const TIMEOUT: Duration = Duration::from_secs(10);

    fn community_db() -> (TempDir, PathBuf) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("community.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            r#"
            CREATE TABLE users (
                Id INTEGER PRIMARY KEY,
                DisplayName TEXT
            );
            CREATE TABLE posts (
                Id INTEGER PRIMARY KEY,
                OwnerUserId INTEGER REFERENCES users(Id),
                ViewCount INTEGER,
                Title TEXT
            );
            INSERT INTO users VALUES (1, 'Jarod Elsworth'), (2, 'Mo');
            INSERT INTO posts VALUES
                (1, 1, 1, 'First post'),
                (2, 1, 8198, 'Second post'),
                (3, 2, 175495, 'Hot post'),
                (4, 2, 8198, 'Fourth post');
            "#,
        )
        .unwrap();
        drop(conn);
        (dir, path)
    }

    fn community_schema() -> RawSchema {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        db.introspect_schema().unwrap()
    }

    // -- masking and retrieval ------------------------------------------

    #[test]
    fn masking_replaces_numbers_strings_and_schema_tokens() {
        let schema = community_schema();
        let masked = mask_question(
            "How many posts have ViewCount above 100?",
            Some(&schema),
        );
        assert_eq!(masked, "how many <COL> have <COL> above <NUM>");

        let masked = mask_question(
            "List users named 'Jarod Elsworth' with Id below 7.5",
            Some(&schema),
        );
        assert_eq!(masked, "list <COL> named <STR> with <COL> below <NUM>");
    }

    #[test]
    fn masking_without_schema_keeps_words() {
        let masked = mask_question("Top 3 \"best\" artists", None);
        assert_eq!(masked, "top <NUM> <STR> artists");
    }

    #[test]
    fn retrieval_prefers_shared_skeleton() {
        let store = vec![
            FewShotCase::new(
                "Name the gasoline type with the lowest price",
                "SELECT GasType FROM prices ORDER BY Price LIMIT 1",
                None,
            ),
            FewShotCase::new(
                "How many posts have ViewCount above 200?",
                "SELECT COUNT(*) FROM posts WHERE ViewCount > 200",
                None,
            ),
        ];
        let schema = community_schema();
        let top = retrieve_similar_cases(
            &store,
            "How many posts have ViewCount above 100?",
            Some(&schema),
            1,
        );
        assert_eq!(top.len(), 1);
        assert!(top[0].question.contains("ViewCount above 200"));
    }

    #[test]
    fn retrieval_empty_store_or_zero_k() {
        let store =
            vec![FewShotCase::new("a question", "SELECT 1", None)];
        assert!(retrieve_similar_cases(&[], "q", None, 3).is_empty());
        assert!(retrieve_similar_cases(&store, "q", None, 0).is_empty());
    }

    #[test]
    fn store_roundtrip_from_jsonl() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("store.jsonl");
        std::fs::write(
            &path,
            "{\"question\": \"Count users older than 30\", \"sql\": \"SELECT COUNT(*) FROM u WHERE age > 30\"}\n\n{\"question\": \"List 'gold' members\", \"sql\": \"SELECT name FROM m WHERE tier = 'gold'\"}\n",
        )
        .unwrap();
        let store = load_few_shot_store(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store[0].skeleton, "count users older than <NUM>");
        assert_eq!(store[1].skeleton, "list <STR> members");

        std::fs::write(&path, "not json\n").unwrap();
        assert!(load_few_shot_store(&path).is_err());
    }

    #[test]
    fn rendered_cases_hold_question_and_sql() {
        let cases = vec![FewShotCase::new(
            "Count the users",
            "SELECT COUNT(*) FROM users",
            None,
        )];
        let text = render_cases(&cases);
        assert!(text.contains("Question: Count the users"));
        assert!(text.contains("SQL: SELECT COUNT(*) FROM users"));
        assert!(render_cases(&[]).is_empty());
    }

    // -- verdict parsing and semantic check -----------------------------

    #[test]
    fn verdict_takes_last_standalone_token() {
        assert_eq!(
            parse_verdict("The draft looks wrong. NO"),
            Some(Verdict::No)
        );
        assert_eq!(
            parse_verdict("NO wait, on reflection: YES"),
            Some(Verdict::Yes)
        );
        // Lowercase and embedded occurrences do not count.
        assert_eq!(parse_verdict("yes, NOtable"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn semantic_check_parses_verdict_first_try() {
        let provider =
            MockProvider::new(["The draft matches the question. YES"]);
        let (verdict, transcript) = semantic_check(
            &provider, "q", "schema", "SELECT 1", "", 0.1,
        )
        .unwrap();
        assert_eq!(verdict, Verdict::Yes);
        assert_eq!(transcript.assistant_turns(), 1);
        assert!(transcript.injections().is_empty());
    }

    #[test]
    fn semantic_check_reprompts_then_defaults_no() {
        let provider = MockProvider::new(["maybe?", "still unsure"]);
        let (verdict, transcript) = semantic_check(
            &provider, "q", "schema", "SELECT 1", "", 0.1,
        )
        .unwrap();
        assert_eq!(verdict, Verdict::No);
        assert_eq!(transcript.assistant_turns(), 2);
        assert_eq!(transcript.injections().len(), 1);
        assert_eq!(transcript.injections()[0].1, InjectionKind::Reprompt);
        let reprompt =
            &transcript.messages()[transcript.injections()[0].0];
        assert_eq!(reprompt.content, YESNO_REPROMPT);
    }

    #[test]
    fn semantic_check_reprompt_can_recover() {
        let provider = MockProvider::new(["hmm", "NO"]);
        let (verdict, _) = semantic_check(
            &provider, "q", "schema", "SELECT 1", "", 0.1,
        )
        .unwrap();
        assert_eq!(verdict, Verdict::No);
    }

    // -- dependency tool ------------------------------------------------

    fn view_count_relation() -> InterColumnRelation {
        InterColumnRelation {
            a: crate::dbcore::ColumnRef::new("posts", "Id"),
            b: crate::dbcore::ColumnRef::new("posts", "ViewCount"),
            kind: RelationKind::Dependency,
            join_path: None,
            fd_ab: Some(true),
            fd_ba: Some(false),
            cardinality: Cardinality::NToOne,
            note: None,
        }
    }

    #[test]
    fn dependency_tool_names_the_many_side() {
        let schema = community_schema();
        let relations = vec![view_count_relation()];
        // From Id's point of view: Id determines ViewCount, N:1, Id is
        // the many side.
        let text =
            dependency_tool(&schema, &relations, "posts", "Id").unwrap();
        assert!(text.contains("N:1"), "{text}");
        assert!(text.contains("`Id` is the many side"), "{text}");
        // From ViewCount's point of view the same pair reads 1:N.
        let text =
            dependency_tool(&schema, &relations, "posts", "ViewCount")
                .unwrap();
        assert!(text.contains("1:N"), "{text}");
        assert!(text.contains("`Id` is the many side"), "{text}");
        assert!(text.contains("DISTINCT"), "{text}");
    }

    #[test]
    fn dependency_tool_one_to_one_phrasing() {
        let schema = community_schema();
        let mut rel = view_count_relation();
        rel.fd_ba = Some(true);
        rel.cardinality = Cardinality::OneToOne;
        let text = dependency_tool(&schema, &[rel], "posts", "Id").unwrap();
        assert!(
            text.contains("maps to exactly one partner value and vice versa"),
            "{text}"
        );
    }

    #[test]
    fn dependency_tool_without_relations_and_unknown_column() {
        let schema = community_schema();
        let text =
            dependency_tool(&schema, &[], "posts", "Title").unwrap();
        assert!(text.contains("no recorded dependencies"), "{text}");

        let err = dependency_tool(&schema, &[], "posts", "Missing")
            .unwrap_err();
        assert!(matches!(err, GenerationError::UnknownColumn { .. }));
        let err =
            dependency_tool(&schema, &[], "nothere", "Id").unwrap_err();
        assert!(matches!(err, GenerationError::UnknownColumn { .. }));
    }

    #[test]
    fn dependency_request_lines_parse() {
        let text = "Let me check.\nDEPENDENCY: posts.ViewCount\nDEPENDENCY: `users`.`Id`\nDEPENDENCY: malformed\n";
        let requests = parse_dependency_requests(text);
        assert_eq!(
            requests,
            vec![
                ("posts".to_string(), "ViewCount".to_string()),
                ("users".to_string(), "Id".to_string()),
            ]
        );
    }

    // -- generation sessions --------------------------------------------

    fn request<'a>(schema: &'a RawSchema, sql_d: &'a str) -> GenerationRequest<'a> {
        GenerationRequest {
            question: "Who wrote the hottest post?",
            schema_text: "# Table: posts ...",
            sql_d,
            cases_text: "",
            schema,
            relations: &[],
            temperature: 0.1,
            max_rounds: 6,
            feedback_rows: 5,
            statement_timeout: TIMEOUT,
            row_cap: 500,
        }
    }

    #[test]
    fn polish_flow_single_interaction() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let sql =
            "SELECT DisplayName FROM users ORDER BY Id LIMIT 1";
        let provider = MockProvider::new([
            "The draft selects the author as asked. YES".to_string(),
            format!("Validating:\n```sql\n{sql}\n```"),
            format!("The result matches. {FINAL_SQL_TAG}\n```sql\n{sql}\n```"),
        ]);
        let outcome = run_generation(
            &provider,
            &db,
            &request(&schema, "SELECT DisplayName FROM users"),
        )
        .unwrap();
        assert_eq!(outcome.branch, Branch::Polish);
        assert_eq!(outcome.sql_g, sql);
        // The final SQL repeats the already-executed statement, so the
        // session runs the executor exactly once.
        assert_eq!(outcome.interaction_count, 1);
        assert_eq!(outcome.executed.len(), 1);
        assert_eq!(outcome.executed[0].1.state, ExecState::Success);
        let kinds: Vec<InjectionKind> = outcome
            .transcript
            .injections()
            .iter()
            .map(|(_, k)| *k)
            .collect();
        assert_eq!(
            kinds,
            vec![
                InjectionKind::BranchPolish,
                InjectionKind::CorrectionSuccess
            ]
        );
        // Three provider calls: verdict, validation, finalization.
        assert_eq!(outcome.transcript.assistant_turns(), 3);
    }

    #[test]
    fn rewrite_flow_corrects_empty_subquery() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let fixed = "SELECT Id FROM posts WHERE ViewCount > 100";
        let provider = MockProvider::new([
            "The draft ignores the filter. NO".to_string(),
            "1. Find hot posts.\n2. Join their owners.\n```sql\nSELECT Id FROM posts WHERE ViewCount > 1000000\n```"
                .to_string(),
            format!("The filter was too strict; relaxing it.\n```sql\n{fixed}\n```"),
            format!("{FINAL_SQL_TAG}\n```sql\n{fixed}\n```"),
        ]);
        let outcome = run_generation(
            &provider,
            &db,
            &request(&schema, "SELECT Id FROM posts"),
        )
        .unwrap();
        assert_eq!(outcome.branch, Branch::Rewrite);
        assert_eq!(outcome.sql_g, fixed);
        assert_eq!(outcome.interaction_count, 2);
        let kinds: Vec<InjectionKind> = outcome
            .transcript
            .injections()
            .iter()
            .map(|(_, k)| *k)
            .collect();
        assert_eq!(
            kinds,
            vec![
                InjectionKind::BranchRewrite,
                InjectionKind::CorrectionEmpty,
                InjectionKind::CorrectionSuccess,
            ]
        );
        // Every injected correction follows the execution it describes:
        // injection indices sit right after assistant messages carrying
        // the executed SQL.
        for (idx, _) in outcome.transcript.injections() {
            assert_eq!(
                outcome.transcript.messages()[idx - 1].role,
                Role::Assistant
            );
        }
    }

    #[test]
    fn dependency_round_injects_tool_result() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let relations = vec![view_count_relation()];
        let sql = "SELECT DISTINCT ViewCount FROM posts";
        let mut req = request(&schema, "SELECT ViewCount FROM posts");
        req.relations = &relations;
        let provider = MockProvider::new([
            "YES".to_string(),
            "DEPENDENCY: posts.ViewCount".to_string(),
            format!("Duplicates possible, adding DISTINCT.\n```sql\n{sql}\n```"),
            format!("{FINAL_SQL_TAG}\n```sql\n{sql}\n```"),
        ]);
        let outcome = run_generation(&provider, &db, &req).unwrap();
        assert_eq!(outcome.sql_g, sql);
        let kinds: Vec<InjectionKind> = outcome
            .transcript
            .injections()
            .iter()
            .map(|(_, k)| *k)
            .collect();
        assert_eq!(
            kinds,
            vec![
                InjectionKind::BranchPolish,
                InjectionKind::ToolResult,
                InjectionKind::CorrectionSuccess,
            ]
        );
        let (tool_idx, _) = outcome.transcript.injections()[1];
        assert!(outcome.transcript.messages()[tool_idx]
            .content
            .contains("1:N"));
    }

    #[test]
    fn budget_exhaustion_keeps_best_so_far() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let good = "SELECT Id FROM posts WHERE ViewCount > 100";
        // Six provider calls: verdict + five SQL rounds, none final. The
        // Success lands mid-session; later rounds only degrade.
        let provider = MockProvider::new([
            "NO".to_string(),
            "```sql\nSELECT Id FROM posts WHERE ViewCount > 9999999\n```".to_string(),
            format!("```sql\n{good}\n```"),
            "```sql\nSELECT Id FROM posts WHERE ViewCount > 8888888\n```".to_string(),
            "```sql\nSELECT bogus FROM nowhere\n```".to_string(),
            "```sql\nSELECT Id FROM posts WHERE 1 = 0\n```".to_string(),
        ]);
        let outcome = run_generation(
            &provider,
            &db,
            &request(&schema, "SELECT Id FROM posts"),
        )
        .unwrap();
        assert_eq!(outcome.transcript.assistant_turns(), 6);
        assert_eq!(outcome.sql_g, good);
        assert_eq!(outcome.interaction_count, 5);
        // The final round's SQL is executed but earns no dangling
        // injection: the last message is the assistant's.
        assert_eq!(
            outcome.transcript.messages().last().unwrap().role,
            Role::Assistant
        );
    }

    #[test]
    fn budget_exhaustion_without_success_prefers_empty_over_failure() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let empty = "SELECT Id FROM posts WHERE ViewCount > 9999999";
        let provider = MockProvider::new([
            "NO".to_string(),
            format!("```sql\n{empty}\n```"),
            "```sql\nSELECT broken FROM nowhere\n```".to_string(),
        ]);
        let mut req = request(&schema, "SELECT Id FROM posts");
        req.max_rounds = 3;
        let outcome = run_generation(&provider, &db, &req).unwrap();
        assert_eq!(outcome.sql_g, empty);
        assert_eq!(outcome.interaction_count, 2);
    }

    #[test]
    fn silence_after_success_terminates_on_that_sql() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let sql = "SELECT COUNT(*) FROM posts";
        let provider = MockProvider::new([
            "YES".to_string(),
            format!("```sql\n{sql}\n```"),
            "That result answers the question.".to_string(),
        ]);
        let outcome = run_generation(
            &provider,
            &db,
            &request(&schema, "SELECT COUNT(*) FROM posts"),
        )
        .unwrap();
        assert_eq!(outcome.sql_g, sql);
        assert_eq!(outcome.interaction_count, 1);
    }

    #[test]
    fn one_round_budget_falls_back_to_draft() {
        let (_dir, path) = community_db();
        let db = open_database(&path).unwrap();
        let schema = db.introspect_schema().unwrap();
        let provider = MockProvider::new(["YES"]);
        let mut req = request(&schema, "SELECT Id FROM posts");
        req.max_rounds = 1;
        let outcome = run_generation(&provider, &db, &req).unwrap();
        assert_eq!(outcome.sql_g, "SELECT Id FROM posts");
        assert_eq!(outcome.interaction_count, 0);
        assert_eq!(outcome.transcript.assistant_turns(), 1);
    }

    // -- rule extraction ------------------------------------------------

    fn success(sql: &str) -> (String, ExecutionOutcome) {
        (
            sql.to_string(),
            ExecutionOutcome {
                state: ExecState::Success,
                result: None,
                error_message: None,
                elapsed: Duration::ZERO,
            },
        )
    }

    fn empty(sql: &str) -> (String, ExecutionOutcome) {
        (
            sql.to_string(),
            ExecutionOutcome {
                state: ExecState::Empty,
                result: None,
                error_message: None,
                elapsed: Duration::ZERO,
            },
        )
    }

    #[test]
    fn condition_rule_from_empty_variant_lacking_the_predicate() {
        let keep = "SELECT Id FROM posts WHERE ViewCount > 100 AND OwnerUserId = 2";
        let dropped = "SELECT Id FROM posts WHERE OwnerUserId = 2";
        let rules = extract_rules(
            &[success(keep), empty(dropped)],
            keep,
        );
        assert_eq!(rules.condition_rules, vec!["viewcount > 100"]);
        assert_eq!(rules.table_rules, vec!["posts"]);
        // The empty variant's predicate survives into the final SQL, so
        // it is not a negative constraint.
        assert!(rules.negative_constraints.is_empty());
    }

    #[test]
    fn negative_constraint_from_abandoned_predicate() {
        let wrong = "SELECT Id FROM posts WHERE Title = 'missing'";
        let fixed = "SELECT Id FROM posts WHERE ViewCount > 100";
        let rules = extract_rules(&[empty(wrong), success(fixed)], fixed);
        assert_eq!(rules.negative_constraints, vec!["title = 'missing'"]);
        // String literals keep their case; identifiers fold.
        assert!(rules.negative_constraints[0].contains("'missing'"));
        assert_eq!(rules.table_rules, vec!["posts"]);
        assert!(rules.condition_rules.is_empty());
    }

    #[test]
    fn table_rules_intersect_success_queries_and_skip_ctes() {
        let a = "WITH hot AS (SELECT * FROM posts) SELECT * FROM hot JOIN users ON 1 = 1";
        let b = "SELECT * FROM posts JOIN users ON users.Id = posts.OwnerUserId";
        let rules = extract_rules(&[success(a), success(b)], b);
        assert_eq!(rules.table_rules, vec!["posts", "users"]);
    }

    #[test]
    fn rules_are_order_invariant() {
        let executed = vec![
            success("SELECT Id FROM posts WHERE ViewCount > 100 AND Title = 'x'"),
            empty("SELECT Id FROM posts WHERE Title = 'x'"),
            empty("SELECT Id FROM posts WHERE Title = 'y'"),
        ];
        let final_sql =
            "SELECT Id FROM posts WHERE ViewCount > 100 AND Title = 'x'";
        let forward = extract_rules(&executed, final_sql);
        let mut reversed = executed.clone();
        reversed.reverse();
        let backward = extract_rules(&reversed, final_sql);
        assert_eq!(forward, backward);
        assert_eq!(forward.condition_rules, vec!["viewcount > 100"]);
        assert_eq!(forward.negative_constraints, vec!["title = 'y'"]);
    }

    #[test]
    fn no_executions_yield_empty_rules() {
        let rules = extract_rules(&[], "SELECT 1");
        assert!(rules.is_empty());
        assert_eq!(rules.rendered(), "(none)");
    }

    #[test]
    fn rendered_rules_are_numbered() {
        let rules = RuleSet {
            condition_rules: vec!["viewcount > 100".to_string()],
            table_rules: vec!["posts".to_string()],
            negative_constraints: vec!["title = 'x'".to_string()],
        };
        let text = rules.rendered();
        assert!(text.contains("(1) The query must keep the condition `viewcount > 100`"));
        assert!(text.contains("(2) The query must use the table `posts`"));
        assert!(text.contains("(3) Do not add the condition `title = 'x'`"));
    }

    #[test]
    fn unparseable_sql_contributes_nothing() {
        let rules = extract_rules(
            &[success("not sql at all"), success("SELECT Id FROM posts")],
            "SELECT Id FROM posts",
        );
        assert_eq!(rules.table_rules, vec!["posts"]);
    }
}
