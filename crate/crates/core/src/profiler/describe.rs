//! Column and table descriptions.
//!
//! Dataset-provided descriptions are read from the `database_description`
//! directory that ships next to many benchmark databases (one CSV per
//! table). When a column has no curated text, callers may synthesize a
//! table summary with the chat model; both paths are fail-soft — a
//! missing or malformed source simply yields no description.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dbcore::ColumnRef;
use crate::gateway::{complete, ChatMessage, ChatProvider};
use crate::prompts;

/// Temperature for description synthesis: factual, so keep it cold.
const DESCRIBE_TEMPERATURE: f64 = 0.1;

/// Load curated column descriptions from `<db-dir>/database_description/`.
///
/// Each `{table}.csv` is expected to carry `original_column_name`,
/// `column_description` and `value_description` columns; the two
/// description fields are joined. Files that are absent, unreadable, or
/// missing the expected headers are skipped.
pub fn load_descriptions(db_dir: &Path) -> BTreeMap<ColumnRef, String> {
    let mut out = BTreeMap::new();
    let desc_dir = db_dir.join("database_description");
    let entries = match std::fs::read_dir(&desc_dir) {
        Ok(entries) => entries,
        Err(_) => return out,
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let Some(table) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        // Description files in the wild mix encodings; replace invalid
        // bytes rather than dropping the whole table.
        let Ok(raw) = std::fs::read(&path) else { continue };
        let text = String::from_utf8_lossy(&raw).into_owned();
        for (column, description) in parse_description_csv(&text) {
            out.insert(ColumnRef::new(table, column), description);
        }
    }
    out
}

fn parse_description_csv(text: &str) -> Vec<(String, String)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Vec::new(),
    };
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
    };
    let Some(name_idx) = find("original_column_name") else {
        return Vec::new();
    };
    let desc_idx = find("column_description");
    let value_idx = find("value_description");

    let mut out = Vec::new();
    for record in reader.records().flatten() {
        let Some(column) = record.get(name_idx).map(str::trim) else {
            continue;
        };
        if column.is_empty() {
            continue;
        }
        let mut parts = Vec::new();
        for idx in [desc_idx, value_idx].into_iter().flatten() {
            if let Some(field) = record.get(idx) {
                let field = normalize_whitespace(field);
                if !field.is_empty() {
                    parts.push(field);
                }
            }
        }
        if !parts.is_empty() {
            out.push((column.to_string(), parts.join(" ")));
        }
    }
    out
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Ask the chat model for a one-paragraph table summary built from the
/// per-column context texts. Any gateway failure yields `None`; a table
/// description is an enrichment, never a prerequisite.
pub fn describe_table(
    provider: &dyn ChatProvider,
    table: &str,
    column_summaries: &[String],
) -> Option<String> {
    let prompt = prompts::table_description_prompt(table, &column_summaries.join("\n"));
    let messages = vec![ChatMessage::user(prompt)];
    match complete(provider, &messages, DESCRIBE_TEMPERATURE, &[]) {
        Ok(completion) => {
            let text = completion.text.trim().to_string();
            if text.is_empty() {
                None
            } else {
                Some(text)
            }
        }
        Err(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockProvider;

    #[test]
    fn reads_bird_style_description_files() {
        let dir = tempfile::tempdir().unwrap();
        let desc = dir.path().join("database_description");
        std::fs::create_dir(&desc).unwrap();
        std::fs::write(
            desc.join("posts.csv"),
            "original_column_name,column_name,column_description,data_format,value_description\n\
             ViewCount,,Number of views,integer,the total number of times a post has been viewed\n\
             Id,,,integer,\n",
        )
        .unwrap();
        std::fs::write(desc.join("notes.txt"), "ignored").unwrap();

        let map = load_descriptions(dir.path());
        assert_eq!(
            map.get(&ColumnRef::new("posts", "ViewCount")).map(String::as_str),
            Some("Number of views the total number of times a post has been viewed"),
        );
        // Rows with empty descriptions are omitted entirely.
        assert!(!map.contains_key(&ColumnRef::new("posts", "Id")));
    }

    #[test]
    fn missing_directory_is_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_descriptions(dir.path()).is_empty());
    }

    #[test]
    fn malformed_headers_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let desc = dir.path().join("database_description");
        std::fs::create_dir(&desc).unwrap();
        std::fs::write(desc.join("bad.csv"), "a,b\n1,2\n").unwrap();
        assert!(load_descriptions(dir.path()).is_empty());
    }

    #[test]
    fn bom_on_first_header_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let desc = dir.path().join("database_description");
        std::fs::create_dir(&desc).unwrap();
        std::fs::write(
            desc.join("users.csv"),
            "\u{feff}original_column_name,column_description\nId,user identifier\n",
        )
        .unwrap();
        let map = load_descriptions(dir.path());
        assert_eq!(
            map.get(&ColumnRef::new("users", "Id")).map(String::as_str),
            Some("user identifier"),
        );
    }

    #[test]
    fn table_summary_failure_is_soft() {
        // Script exhausted on first call → provider error → None.
        let provider = MockProvider::new(Vec::<String>::new());
        assert_eq!(describe_table(&provider, "posts", &[]), None);

        let provider = MockProvider::new(["Posts hold questions and answers."]);
        assert_eq!(
            describe_table(&provider, "posts", &["col a".into()]).as_deref(),
            Some("Posts hold questions and answers."),
        );
    }
}
