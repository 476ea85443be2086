//! Natural-language rendering of profiled metadata.
//!
//! Each column's profile becomes one deterministic paragraph; the two
//! granularities differ in how much of the profile they expose:
//!
//! * **Complete** — description, examples, range, value patterns,
//!   similarity notes, dependency notes, plus table descriptions.
//! * **Partial** — description and representative examples only.
//!
//! Row counts, null counts and size bounds are profiled but deliberately
//! never rendered; they add noise without helping query generation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dbcore::{ColumnRef, RawSchema};
use crate::util::format_thousands;

use super::{ColumnProfile, DatabaseProfile, InterColumnRelation, ProfilerError, RelationKind};

/// Context granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Complete,
    Partial,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMode::Complete => write!(f, "complete"),
            ContextMode::Partial => write!(f, "partial"),
        }
    }
}

impl FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(ContextMode::Complete),
            "partial" => Ok(ContextMode::Partial),
            other => Err(format!("unknown context mode `{other}` (expected complete|partial)")),
        }
    }
}

/// Rendered schema context at one granularity. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataContext {
    pub mode: ContextMode,
    pub per_column_text: BTreeMap<ColumnRef, String>,
    pub per_table_text: BTreeMap<String, String>,
    pub relations: Vec<InterColumnRelation>,
}

/// Render every schema column's profile into natural language. Fails if
/// any schema column lacks a profile; output is a pure function of its
/// inputs.
pub fn render_context(
    schema: &RawSchema,
    profile: &DatabaseProfile,
    mode: ContextMode,
) -> Result<MetadataContext, ProfilerError> {
    let by_ref: BTreeMap<ColumnRef, &ColumnProfile> = profile
        .columns
        .iter()
        .map(|p| (ColumnRef::new(p.table.clone(), p.column.clone()), p))
        .collect();

    let mut per_column_text = BTreeMap::new();
    for column in schema.all_columns() {
        let Some(col_profile) = by_ref.get(&column) else {
            return Err(ProfilerError::MissingProfile(column));
        };
        per_column_text.insert(column, render_column_text(col_profile, &profile.relations, mode));
    }

    let mut per_table_text = BTreeMap::new();
    if mode == ContextMode::Complete {
        for table in &profile.tables {
            if let Some(description) = &table.description {
                per_table_text.insert(table.table.clone(), description.clone());
            }
        }
    }

    Ok(MetadataContext {
        mode,
        per_column_text,
        per_table_text,
        relations: profile.relations.clone(),
    })
}

/// One paragraph for one column at the requested granularity.
pub fn render_column_text(
    profile: &ColumnProfile,
    relations: &[InterColumnRelation],
    mode: ContextMode,
) -> String {
    let mut sentences = vec![base_sentence(profile)];
    if let Some(s) = examples_sentence(profile) {
        sentences.push(s);
    }
    if mode == ContextMode::Complete {
        if let Some(s) = range_sentence(profile) {
            sentences.push(s);
        }
        if let Some(s) = patterns_sentence(profile) {
            sentences.push(s);
        }
        let me = ColumnRef::new(profile.table.clone(), profile.column.clone());
        // Similarity notes first, then same-table dependency notes.
        for relation in relations.iter().filter(|r| r.kind != RelationKind::Dependency) {
            if let Some(s) = similarity_sentence(&me, relation) {
                sentences.push(s);
            }
        }
        for relation in relations.iter().filter(|r| r.kind == RelationKind::Dependency) {
            if let Some(s) = dependency_sentence(&me, relation) {
                sentences.push(s);
            }
        }
    }
    sentences.join(" ")
}

/// "The `ViewCount` column in the `posts` table is an integer that
/// represents the total number of times a post has been viewed."
fn base_sentence(profile: &ColumnProfile) -> String {
    let noun = type_noun(&profile.declared_type);
    match &profile.description {
        Some(description) => format!(
            "The `{}` column in the `{}` table is {} that represents {}.",
            profile.column,
            profile.table,
            noun,
            description.trim().trim_end_matches('.'),
        ),
        None => format!(
            "The `{}` column in the `{}` table is {}.",
            profile.column, profile.table, noun,
        ),
    }
}

/// Map a declared type to an article + noun phrase.
fn type_noun(declared_type: &str) -> String {
    let ty = declared_type.to_ascii_uppercase();
    if ty.contains("INT") {
        "an integer".into()
    } else if ty.contains("REAL") || ty.contains("FLOA") || ty.contains("DOUB") {
        "a real number".into()
    } else if ty.contains("BOOL") {
        "a boolean value".into()
    } else if ty.contains("DATE") || ty.contains("TIME") {
        "a date/time value".into()
    } else if ty.contains("DEC") || ty.contains("NUMERIC") {
        "a numeric value".into()
    } else if ty.contains("CHAR") || ty.contains("CLOB") || ty.contains("TEXT") {
        "a text value".into()
    } else if ty.contains("BLOB") || ty.is_empty() {
        "a stored value".into()
    } else {
        format!("a value of type {}", declared_type)
    }
}

fn examples_sentence(profile: &ColumnProfile) -> Option<String> {
    if profile.sampled_examples.is_empty() {
        return None;
    }
    let rendered: Vec<String> = profile
        .sampled_examples
        .iter()
        .map(|v| render_example(v, profile.is_numeric))
        .collect();
    Some(if rendered.len() == 1 {
        format!("The typical example is {}.", rendered[0])
    } else {
        format!("The typical examples are {}.", join_list(&rendered))
    })
}

fn render_example(value: &str, is_numeric: bool) -> String {
    if is_numeric {
        if let Ok(i) = value.parse::<i64>() {
            return format_thousands(i);
        }
        if value.parse::<f64>().is_ok() {
            return value.to_string();
        }
    }
    format!("'{}'", value)
}

/// "It ranges from 1 to 175,495."
fn range_sentence(profile: &ColumnProfile) -> Option<String> {
    let (min, max) = profile.range?;
    Some(format!("It ranges from {} to {}.", render_bound(min), render_bound(max)))
}

fn render_bound(v: f64) -> String {
    if v.fract() == 0.0 && v.is_finite() && v.abs() < 1e15 {
        format_thousands(v as i64)
    } else {
        format!("{v}")
    }
}

/// Up to three dominant value patterns for non-numeric columns.
fn patterns_sentence(profile: &ColumnProfile) -> Option<String> {
    if profile.is_numeric || profile.patterns.is_empty() {
        return None;
    }
    let shown: Vec<String> =
        profile.patterns.iter().take(3).map(|(p, _)| format!("`{p}`")).collect();
    Some(if shown.len() == 1 {
        format!("The values follow the pattern {}.", shown[0])
    } else {
        format!("The values follow patterns such as {}.", join_list(&shown))
    })
}

/// Cross-table duplicate/similar note, from the rendered column's side.
fn similarity_sentence(me: &ColumnRef, relation: &InterColumnRelation) -> Option<String> {
    let partner = partner_of(me, relation)?;
    let verb = match relation.kind {
        RelationKind::Duplicate => "identical to",
        RelationKind::Similar => "similar to",
        RelationKind::Dependency => return None,
    };
    let mut sentence = format!(
        "Its values are {} those of the `{}` column in the `{}` table.",
        verb, partner.column, partner.table,
    );
    if let Some(path) = &relation.join_path {
        sentence.push_str(&format!(" The tables can be joined via {path}."));
    }
    Some(sentence)
}

/// Same-table dependency note phrased from the rendered column's side,
/// e.g. "Multiple rows in the `posts` table with different `Id` values
/// may have the same `ViewCount` value."
fn dependency_sentence(me: &ColumnRef, relation: &InterColumnRelation) -> Option<String> {
    let partner = partner_of(me, relation)?;
    let (fd_to_partner, fd_from_partner) = if *me == relation.a {
        (relation.fd_ab, relation.fd_ba)
    } else {
        (relation.fd_ba, relation.fd_ab)
    };
    match (fd_to_partner, fd_from_partner) {
        (Some(true), Some(true)) => Some(format!(
            "Each `{}` value in the `{}` table pairs with exactly one `{}` value and vice versa.",
            me.column, me.table, partner.column,
        )),
        (Some(false), Some(true)) => Some(format!(
            "Multiple rows in the `{}` table with different `{}` values may have the same `{}` value.",
            me.table, partner.column, me.column,
        )),
        (Some(true), Some(false)) => Some(format!(
            "Multiple rows in the `{}` table with different `{}` values may have the same `{}` value.",
            me.table, me.column, partner.column,
        )),
        (Some(false), Some(false)) => Some(format!(
            "Values of `{}` and `{}` vary independently across the `{}` table.",
            me.column, partner.column, me.table,
        )),
        _ => None,
    }
}

fn partner_of<'a>(me: &ColumnRef, relation: &'a InterColumnRelation) -> Option<&'a ColumnRef> {
    if relation.a == *me {
        Some(&relation.b)
    } else if relation.b == *me {
        Some(&relation.a)
    } else {
        None
    }
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

/// Render a (sub)schema as text: one section per table with primary-key
/// and foreign-key lines, the table description (Complete mode), and the
/// per-column paragraphs. `subset = None` renders everything; otherwise
/// only listed columns appear and foreign-key lines are kept only when
/// both endpoint tables are present.
pub fn render_schema_text(
    schema: &RawSchema,
    context: &MetadataContext,
    subset: Option<&std::collections::BTreeSet<ColumnRef>>,
) -> String {
    let included_table = |name: &str| match subset {
        None => schema.table(name).is_some(),
        Some(set) => set.iter().any(|c| c.table.eq_ignore_ascii_case(name)),
    };

    let mut sections = Vec::new();
    for table in &schema.tables {
        if !included_table(&table.name) {
            continue;
        }
        let mut lines = vec![format!("# Table: {}", table.name)];

        let pk: Vec<String> =
            table.primary_key_columns().map(|c| format!("`{}`", c.name)).collect();
        if !pk.is_empty() {
            lines.push(format!("Primary key: {}.", join_list(&pk)));
        }
        for fk in &table.foreign_keys {
            if included_table(&fk.to_table) {
                lines.push(format!(
                    "Foreign key: `{}`.`{}` references `{}`.`{}`.",
                    table.name, fk.from_column, fk.to_table, fk.to_column,
                ));
            }
        }
        if let Some(description) = context.per_table_text.get(&table.name) {
            lines.push(description.clone());
        }
        lines.push("Columns:".to_string());
        for column in &table.columns {
            let column_ref = ColumnRef::new(table.name.clone(), column.name.clone());
            if let Some(set) = subset {
                if !set.contains(&column_ref) {
                    continue;
                }
            }
            if let Some(text) = context.per_column_text.get(&column_ref) {
                lines.push(format!("- {text}"));
            }
        }
        sections.push(lines.join("\n"));
    }
    sections.join("\n\n")
}
