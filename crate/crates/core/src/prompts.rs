//! The prompt catalog: every template the pipeline sends to a model.
//!
//! Templates are plain string builders so tests can pin the rendered text
//! with golden files. Fixed sentences that downstream parsing relies on
//! (the step-1 stop contract, the final-SQL tag, the YES/NO reprompt) are
//! exported as constants and must not drift.

use crate::dbcore::{ExecutionOutcome, ResultSet};

/// Sentence inside the generation prompt instructing the model to halt
/// after the semantic check. Its leading words double as the session
/// stop marker.
pub const STOP_WAIT_SENTENCE: &str =
    "STOP generation. Wait for the system to provide additional instructions.";

/// Stop marker passed to the provider for step-1 interruption.
pub const STOP_MARKER: &str = "STOP generation";

/// Tag the model uses to signal its finished query. Everything after the
/// tag (fenced or bare) is parsed as the final SQL.
pub const FINAL_SQL_TAG: &str = "FINAL SQL:";

/// Reprompt sent when the semantic check emits neither verdict token.
pub const YESNO_REPROMPT: &str = "Answer only \"YES\" or \"NO\".";

/// Output-format contract shared by SQL-producing prompts.
pub const OUTPUT_FORMAT_SQL: &str = "\
Write every SQL query inside a fenced code block:
```sql
SELECT ...
```
When your SQL is final, signal completion by writing `FINAL SQL:` followed by one fenced SQL block.";

/// Output-format contract for single-shot rewriting prompts (alignment):
/// exactly one fenced SQL block, nothing else.
pub const OUTPUT_FORMAT_SINGLE_SQL: &str = "\
Return exactly one SQL query inside a fenced code block:
```sql
SELECT ...
```
Do not include any other text.";

/// The SQL-generation session prompt (semantic check + polish/rewrite
/// branches). This is the initial prompt of the chained session; the
/// model must stop after step 1.
pub fn generation_prompt(
    schema_f: &str,
    question: &str,
    draft_sql: &str,
    cases: &str,
) -> String {
    let mut p = String::new();
    p.push_str("# Goal: Follow the STEP, generate an executable SQL that fully satisfies the user question.\n");
    p.push_str("# STEP:\n");
    p.push_str("1. Analyze the Draft SQL and explain what this query is intended to do. Determine whether it is suitable to answer the question. Answer only \"YES\" or \"NO\" after careful thinking.\n");
    p.push_str("2.1. If your answer is \"NO\", rewrite the executable SQL query to correctly answers the question.\n");
    p.push_str("2.2. If your answer is \"YES\", check and correct any minor errors existing in Draft SQL.\n");
    p.push_str("** VERY IMPORTANT: After completing step 1, ");
    p.push_str(STOP_WAIT_SENTENCE);
    p.push_str("**\n");
    p.push_str("# Database Schema: ");
    p.push_str(schema_f);
    p.push('\n');
    if !cases.is_empty() {
        p.push_str("# Examples: ");
        p.push_str(cases);
        p.push('\n');
    }
    p.push_str("# Output Format: ");
    p.push_str(OUTPUT_FORMAT_SQL);
    p.push('\n');
    p.push_str("Question: ");
    p.push_str(question);
    p.push('\n');
    p.push_str("Draft SQL: ");
    p.push_str(draft_sql);
    p.push('\n');
    p
}

/// Branch instruction injected after a YES verdict.
pub fn polish_instruction() -> String {
    format!(
        "Your answer is \"YES\". Proceed with step 2.2: check and correct any minor errors \
existing in Draft SQL (e.g., the use of DISTINCT and the handling of NULL values). \
You may validate a query at any time by emitting it in a fenced sql block; the system \
will execute it and report the result. You may also ask for column dependency facts \
with a line `DEPENDENCY: table.column`. When the result is satisfactory, output \
`{FINAL_SQL_TAG}` followed by the final query."
    )
}

/// Branch instruction injected after a NO verdict.
pub fn rewrite_instruction() -> String {
    format!(
        "Your answer is \"NO\". Proceed with step 2.1: rewrite the SQL query so it correctly \
answers the question. First decompose the question into numbered sub-questions \
(1., 2., ...), then emit the subquery for one sub-question at a time in a fenced sql \
block and wait for its execution result before continuing. Form the final SQL by \
progressively combining the subqueries. When the result is satisfactory, output \
`{FINAL_SQL_TAG}` followed by the final query."
    )
}

/// Renders rows Python-tuple style, the form models have seen in
/// execution feedback: `[(1, 'a'), (2, 'b')]`.
pub fn render_rows(result: &ResultSet, limit: usize) -> String {
    let mut out = String::from("[");
    for (i, row) in result.rows.iter().take(limit).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('(');
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            out.push_str(&cell.render());
        }
        if row.len() == 1 {
            out.push(','); // single-element tuple, Python spelling
        }
        out.push(')');
    }
    out.push(']');
    out
}

/// Instruction for the Execution Success state.
pub fn correction_success(sql: &str, result: &ResultSet, feedback_rows: usize) -> String {
    let total = result.total_row_count;
    let shown = (feedback_rows as u64).min(total).min(result.rows.len() as u64);
    format!(
        "The SQL query {sql} returns `Success`.\n\
The execution returned {total} rows.\n\
The {shown}/{total} rows are: {rows}",
        rows = render_rows(result, shown as usize)
    )
}

/// Instruction for the Execution None state.
pub fn correction_none(sql: &str) -> String {
    format!(
        "The SQL query {sql} returns `None`.\n\
You should consider whether there is a potential issue below, and adjust your answer to return valid results.\n\
(1) **Logical error:** Following the SQL skeleton provided in the example, you should try another reasoning path.\n\
(2) **Exception:** Do not introduce additional filters to exclude outliers in order to avoid returning `None` result, unless the question explicitly instructs you to do so."
    )
}

/// Instruction for the Execution Empty state.
pub fn correction_empty(sql: &str) -> String {
    format!(
        "The SQL query {sql} returns `Empty`.\n\
You should consider whether there is a potential issue below, and adjust your answer to return valid results.\n\
(1) Data Format Inconsistency: The values in the SQL query must be converted to the same format as the corresponding values in the database.\n\
(2) Value Mismatch: First, use case-insensitive fuzzy matching (e.g., `LOWER`,`LIKE`) to broaden the search and retrieve a subset of potential values. Then, within this subset, use a strict method (e.g., `=`) to identify the single correct value that best matches the user's intent.\n\
(3) Domain Mismatch: Ensure that the joined columns or compared columns share the same semantic domain."
    )
}

/// Instruction for the Execution Failure state.
pub fn correction_failure(sql: &str, error_message: &str) -> String {
    format!(
        "The SQL query {sql} returns `Failed`.\n\
You should fix it based on the message below.\n\
Error Message: {error_message}"
    )
}

/// Dispatch to the state-matching instruction template.
pub fn correction_instruction(
    outcome: &ExecutionOutcome,
    sql: &str,
    feedback_rows: usize,
) -> String {
    use crate::dbcore::ExecState::*;
    match outcome.state {
        Success => {
            let result = outcome.result.as_ref().expect("Success carries a result");
            correction_success(sql, result, feedback_rows)
        }
        NoneValued => correction_none(sql),
        Empty => correction_empty(sql),
        Failure => correction_failure(
            sql,
            outcome.error_message.as_deref().unwrap_or("unknown error"),
        ),
    }
}

/// The function-alignment prompt (preference check).
pub fn function_alignment_prompt(
    given_rules: &str,
    check_rules: &str,
    sql_g: &str,
    question: &str,
) -> String {
    format!(
        "# Goal: Your task is to perform a preference check on the given SQL query. \
You must strictly follow both the given rules and the check rules below, and convert \
the given SQL into a compliant, executable SQL query.\n\
# Given Rules: {given_rules}\n\
# Check Rules:\n{check_rules}\n\
# Output Format: {OUTPUT_FORMAT_SINGLE_SQL}\n\
# Given SQL: {sql_g}\n\
# Question: {question}\n"
    )
}

/// The output-alignment prompt (column check).
pub fn output_alignment_prompt(examples: &str, sql_f: &str, question: &str) -> String {
    format!(
        "# Goal: Your task is to perform a column check on the given SQL query.\n\
# STEP:\n\
(1) Extract the explicit content that the user needs to return as the **minimum** \
requirement in the question. Omitting identifier columns is acceptable if not \
explicitly requested.\n\
(2) Modify the SELECT clause in the SQL query to return only the requested content.\n\
# Important Note:\n\
**You are only allowed to delete, add, or reorder the selected columns. Other \
operations are strictly prohibited, even if the logic in the SQL might be incorrect.**\n\
# Examples: {examples}\n\
# Output Format: {OUTPUT_FORMAT_SINGLE_SQL}\n\
# Given SQL: {sql_f}\n\
# Question: {question}\n"
    )
}

/// Prompt for the draft SQL used in schema linking.
pub fn draft_prompt(context: &str, question: &str, evidence: Option<&str>) -> String {
    let mut p = String::new();
    p.push_str(
        "# Goal: Write one executable SQL query that answers the question over the \
database described below. We require you to avoid using explicit aliases (no `AS`); \
always reference columns as table.column.\n",
    );
    p.push_str("# Database Schema: ");
    p.push_str(context);
    p.push('\n');
    p.push_str("# Output Format: ");
    p.push_str(OUTPUT_FORMAT_SINGLE_SQL);
    p.push('\n');
    if let Some(ev) = evidence {
        if !ev.is_empty() {
            p.push_str("Evidence: ");
            p.push_str(ev);
            p.push('\n');
        }
    }
    p.push_str("Question: ");
    p.push_str(question);
    p.push('\n');
    p
}

/// Prompt for generating a table-level description from column metadata.
pub fn table_description_prompt(table: &str, column_summaries: &str) -> String {
    format!(
        "# Goal: Write a single-paragraph description of the database table `{table}`. \
Outline the table's function, identify its key columns, and suggest potential usage \
scenarios. Base the description only on the column metadata below.\n\
# Columns:\n{column_summaries}\n\
Respond with the paragraph only.\n"
    )
}

/// Extracts every fenced SQL block (```sql ... ``` or bare ``` ... ```),
/// in order of appearance.
pub fn extract_sql_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // Skip an optional language tag on the opening line.
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let tag = after[..body_start].trim();
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                let candidate = body[..end].trim();
                let tag_ok = tag.is_empty() || tag.eq_ignore_ascii_case("sql");
                if tag_ok && !candidate.is_empty() {
                    blocks.push(candidate.to_string());
                }
                rest = &body[end + 3..];
            }
            None => break, // unterminated fence
        }
    }
    blocks
}

/// Parses the final SQL after [`FINAL_SQL_TAG`]: the first fenced block
/// following the tag, else the bare remainder of the message.
pub fn extract_final_sql(text: &str) -> Option<String> {
    let idx = text.find(FINAL_SQL_TAG)?;
    let after = &text[idx + FINAL_SQL_TAG.len()..];
    let blocks = extract_sql_blocks(after);
    if let Some(first) = blocks.into_iter().next() {
        return Some(first);
    }
    let bare = after.trim();
    if bare.is_empty() {
        None
    } else {
        Some(bare.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbcore::Value;

    #[test]
    fn generation_prompt_carries_stop_contract() {
        let p = generation_prompt("schema text", "q?", "SELECT 1", "");
        assert!(p.contains("STOP generation. Wait for the system to provide additional instructions."));
        assert!(p.contains("Answer only \"YES\" or \"NO\" after careful thinking."));
        assert!(!p.contains("# Examples:"));
    }

    #[test]
    fn success_instruction_counts_rows() {
        let rs = ResultSet::new(
            vec!["a".into()],
            vec![
                vec![Value::Integer(1)],
                vec![Value::Integer(2)],
                vec![Value::Integer(3)],
            ],
        );
        let text = correction_success("SELECT a FROM t", &rs, 5);
        assert!(text.contains("returns `Success`"));
        assert!(text.contains("The execution returned 3 rows."));
        assert!(text.contains("The 3/3 rows are: [(1,), (2,), (3,)]"));
    }

    #[test]
    fn failure_instruction_embeds_message_verbatim() {
        let text = correction_failure("SELECT x", "no such column: x");
        assert!(text.contains("returns `Failed`"));
        assert!(text.contains("Error Message: no such column: x"));
    }

    #[test]
    fn empty_instruction_lists_three_issues() {
        let text = correction_empty("SELECT 1 WHERE 0");
        assert!(text.contains("Data Format Inconsistency"));
        assert!(text.contains("Value Mismatch"));
        assert!(text.contains("Domain Mismatch"));
        assert!(text.contains("`LOWER`,`LIKE`"));
    }

    #[test]
    fn sql_block_extraction() {
        let text = "thinking...\n```sql\nSELECT 1\n```\nmore\n```sql\nSELECT 2\n```";
        assert_eq!(extract_sql_blocks(text), vec!["SELECT 1", "SELECT 2"]);
    }

    #[test]
    fn block_with_non_sql_tag_is_skipped() {
        let text = "```python\nprint(1)\n```\n```sql\nSELECT 3\n```";
        assert_eq!(extract_sql_blocks(text), vec!["SELECT 3"]);
    }

    #[test]
    fn final_sql_fenced_and_bare() {
        let fenced = "done.\nFINAL SQL:\n```sql\nSELECT a FROM t\n```";
        assert_eq!(extract_final_sql(fenced).as_deref(), Some("SELECT a FROM t"));
        let bare = "FINAL SQL: SELECT b FROM t";
        assert_eq!(extract_final_sql(bare).as_deref(), Some("SELECT b FROM t"));
        assert_eq!(extract_final_sql("no tag here"), None);
    }

    #[test]
    fn alignment_prompts_carry_pinned_phrases() {
        let f = function_alignment_prompt("- none", "(1) rule", "SELECT 1", "q");
        assert!(f.contains("perform a preference check"));
        let o = output_alignment_prompt("examples", "SELECT 1", "q");
        assert!(o.contains("perform a column check"));
        assert!(o.contains("Other operations are strictly prohibited"));
    }
}
