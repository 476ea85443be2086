//! SQL-driven schema linking.
//!
//! Instead of asking the model which columns matter, we ask it for a
//! draft query over the full context, parse the draft, and keep exactly
//! the columns it touched — then widen the set with profiled
//! similar/duplicate partner columns and re-render only that slice of
//! the schema. Linking optimizes recall: ambiguous references resolve to
//! every candidate, and an unparseable draft falls back to the full
//! schema so the pipeline always proceeds.

use std::collections::BTreeSet;

use sqlparser::ast::{
    Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Join, JoinConstraint,
    JoinOperator, Query, Select, SelectItem, SetExpr, Statement, TableFactor, TableWithJoins,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::dbcore::{ColumnRef, RawSchema};
use crate::gateway::{complete, ChatMessage, ChatProvider, GatewayError};
use crate::profiler::{InterColumnRelation, MetadataContext, RelationKind};
use crate::prompts;

#[derive(Debug, Error)]
pub enum LinkingError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot parse SQL: {0}")]
    Parse(String),
    #[error("column set is empty")]
    EmptyColumnSet,
}

/// A set of schema columns, always stored with their real (unaliased)
/// table names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnSet {
    pub members: BTreeSet<ColumnRef>,
}

impl ColumnSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, column: ColumnRef) {
        self.members.insert(column);
    }

    pub fn contains(&self, column: &ColumnRef) -> bool {
        self.members.contains(column)
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ColumnRef> {
        self.members.iter()
    }

    /// Tables with at least one member, in member order.
    pub fn tables(&self) -> BTreeSet<String> {
        self.members.iter().map(|c| c.table.clone()).collect()
    }
}

impl FromIterator<ColumnRef> for ColumnSet {
    fn from_iter<I: IntoIterator<Item = ColumnRef>>(columns: I) -> Self {
        Self { members: columns.into_iter().collect() }
    }
}

/// The question-relevant slice of the schema, rendered for prompting.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSchema {
    pub columns: ColumnSet,
    pub rendered_text: String,
    pub source_mode: crate::profiler::ContextMode,
}

/// Result of draft generation: the last emitted SQL, whether it parsed,
/// and how many attempts were used.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftSql {
    pub sql: String,
    pub parsed: bool,
    pub attempts: usize,
    /// Tokens produced across all draft attempts (cost accounting).
    pub output_tokens: u64,
}

/// Ask the model for a draft query over the full schema context,
/// retrying while the answer does not parse. The last attempt is
/// returned even when unparseable, flagged.
pub fn generate_draft_sql(
    provider: &dyn ChatProvider,
    question: &str,
    evidence: Option<&str>,
    context: &MetadataContext,
    schema: &RawSchema,
    retries: usize,
    temperature: f64,
) -> Result<DraftSql, LinkingError> {
    let retries = retries.max(1);
    let context_text = crate::profiler::render_schema_text(schema, context, None);
    let mut messages = vec![ChatMessage::user(prompts::draft_prompt(
        &context_text,
        question,
        evidence,
    ))];

    let mut last_sql = String::new();
    let mut output_tokens = 0;
    for attempt in 1..=retries {
        let completion = complete(provider, &messages, temperature, &[])?;
        output_tokens += completion.output_tokens.unwrap_or(0);
        last_sql = candidate_sql(&completion.text);
        if parse_query(&last_sql).is_ok() {
            return Ok(DraftSql { sql: last_sql, parsed: true, attempts: attempt, output_tokens });
        }
        if attempt < retries {
            messages.push(ChatMessage::assistant(completion.text.clone()));
            messages.push(ChatMessage::user(
                "The previous answer is not valid SQLite SQL. Reply with exactly one \
                 valid SQLite SELECT query in a ```sql code block."
                    .to_string(),
            ));
        }
    }
    Ok(DraftSql { sql: last_sql, parsed: false, attempts: retries, output_tokens })
}

/// Pull the most plausible SQL string out of a completion: the last
/// fenced block if any, otherwise the whole trimmed text.
fn candidate_sql(text: &str) -> String {
    let blocks = prompts::extract_sql_blocks(text);
    match blocks.last() {
        Some(block) => block.clone(),
        None => text.trim().to_string(),
    }
}

/// Parse one SELECT/WITH statement into its AST.
fn parse_query(sql: &str) -> Result<Query, LinkingError> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| LinkingError::Parse(e.to_string()))?;
    match statements.into_iter().next() {
        Some(Statement::Query(q)) => Ok(*q),
        Some(other) => Err(LinkingError::Parse(format!("not a query: {other}"))),
        None => Err(LinkingError::Parse("empty statement".into())),
    }
}

/// Every schema column referenced anywhere in the statement, with
/// aliases resolved and unqualified names matched against the tables
/// visible in the enclosing FROM scopes. Ambiguous unqualified names
/// resolve to all candidates.
pub fn extract_references(sql: &str, schema: &RawSchema) -> Result<ColumnSet, LinkingError> {
    let query = parse_query(sql)?;
    let mut resolver = Resolver { schema, found: BTreeSet::new() };
    resolver.walk_query(&query, &[]);
    Ok(ColumnSet { members: resolver.found })
}

/// One visible relation in a FROM scope: its visible (alias) name and
/// the real table name when it is a base table rather than a derived
/// relation or CTE.
#[derive(Debug, Clone)]
struct ScopeEntry {
    visible: String,
    real_table: Option<String>,
}

type ScopeFrame = Vec<ScopeEntry>;

struct Resolver<'a> {
    schema: &'a RawSchema,
    found: BTreeSet<ColumnRef>,
}

impl<'a> Resolver<'a> {
    fn walk_query(&mut self, query: &Query, outer: &[ScopeFrame]) {
        // CTE bodies see the outer scope plus previously defined CTEs;
        // the CTE itself becomes a derived relation for later parts.
        let mut cte_frame: ScopeFrame = Vec::new();
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                let mut scope = outer.to_vec();
                scope.push(cte_frame.clone());
                self.walk_query(&cte.query, &scope);
                cte_frame.push(ScopeEntry {
                    visible: cte.alias.name.value.clone(),
                    real_table: None,
                });
            }
        }
        let mut scope = outer.to_vec();
        if !cte_frame.is_empty() {
            scope.push(cte_frame);
        }

        let body_frame = self.walk_set_expr(&query.body, &scope);

        // Query-level ORDER BY / LIMIT resolve in the body's FROM scope
        // when the body is a plain SELECT.
        let mut order_scope = scope.clone();
        if let Some(frame) = body_frame {
            order_scope.push(frame);
        }
        if let Some(order_by) = &query.order_by {
            for item in &order_by.exprs {
                self.walk_expr(&item.expr, &order_scope);
            }
        }
        if let Some(limit) = &query.limit {
            self.walk_expr(limit, &order_scope);
        }
        if let Some(offset) = &query.offset {
            self.walk_expr(&offset.value, &order_scope);
        }
    }

    /// Returns the FROM frame when the set expression is a single SELECT.
    fn walk_set_expr(&mut self, body: &SetExpr, scope: &[ScopeFrame]) -> Option<ScopeFrame> {
        match body {
            SetExpr::Select(select) => Some(self.walk_select(select, scope)),
            SetExpr::Query(query) => {
                self.walk_query(query, scope);
                None
            }
            SetExpr::SetOperation { left, right, .. } => {
                self.walk_set_expr(left, scope);
                self.walk_set_expr(right, scope);
                None
            }
            SetExpr::Values(values) => {
                for row in &values.rows {
                    for expr in row {
                        self.walk_expr(expr, scope);
                    }
                }
                None
            }
            _ => None,
        }
    }

    fn walk_select(&mut self, select: &Select, outer: &[ScopeFrame]) -> ScopeFrame {
        let mut frame: ScopeFrame = Vec::new();
        for twj in &select.from {
            self.register_table_with_joins(twj, outer, &mut frame);
        }
        let mut scope = outer.to_vec();
        scope.push(frame.clone());

        // Join constraints see the full FROM scope.
        for twj in &select.from {
            self.walk_join_constraints(twj, &scope);
        }

        for item in &select.projection {
            match item {
                SelectItem::UnnamedExpr(expr) | SelectItem::ExprWithAlias { expr, .. } => {
                    self.walk_expr(expr, &scope);
                }
                SelectItem::Wildcard(_) => {
                    for entry in &frame {
                        self.expand_wildcard(entry);
                    }
                }
                SelectItem::QualifiedWildcard(name, _) => {
                    if let Some(qualifier) = name.0.last() {
                        if let Some(entry) = lookup(&scope, &qualifier.value) {
                            self.expand_wildcard(&entry);
                        }
                    }
                }
            }
        }
        if let Some(selection) = &select.selection {
            self.walk_expr(selection, &scope);
        }
        if let GroupByExpr::Expressions(exprs, _) = &select.group_by {
            for expr in exprs {
                self.walk_expr(expr, &scope);
            }
        }
        if let Some(having) = &select.having {
            self.walk_expr(having, &scope);
        }
        if let Some(qualify) = &select.qualify {
            self.walk_expr(qualify, &scope);
        }
        frame
    }

    fn register_table_with_joins(
        &mut self,
        twj: &TableWithJoins,
        outer: &[ScopeFrame],
        frame: &mut ScopeFrame,
    ) {
        self.register_factor(&twj.relation, outer, frame);
        for join in &twj.joins {
            self.register_factor(&join.relation, outer, frame);
        }
    }

    fn register_factor(
        &mut self,
        factor: &TableFactor,
        outer: &[ScopeFrame],
        frame: &mut ScopeFrame,
    ) {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let table_name = match name.0.last() {
                    Some(ident) => ident.value.clone(),
                    None => return,
                };
                // A name bound to a CTE or derived relation in an outer
                // scope shadows any base table of the same name.
                let shadowed = lookup(outer, &table_name)
                    .map(|entry| entry.real_table.is_none())
                    .unwrap_or(false);
                let real_table = if shadowed {
                    None
                } else {
                    self.schema.table(&table_name).map(|t| t.name.clone())
                };
                let visible = alias
                    .as_ref()
                    .map(|a| a.name.value.clone())
                    .unwrap_or_else(|| table_name.clone());
                frame.push(ScopeEntry { visible, real_table });
            }
            TableFactor::Derived { subquery, alias, .. } => {
                self.walk_query(subquery, outer);
                let visible = alias
                    .as_ref()
                    .map(|a| a.name.value.clone())
                    .unwrap_or_default();
                frame.push(ScopeEntry { visible, real_table: None });
            }
            TableFactor::NestedJoin { table_with_joins, .. } => {
                self.register_table_with_joins(table_with_joins, outer, frame);
            }
            _ => {}
        }
    }

    fn walk_join_constraints(&mut self, twj: &TableWithJoins, scope: &[ScopeFrame]) {
        for join in &twj.joins {
            if let Some(constraint) = join_constraint(join) {
                match constraint {
                    JoinConstraint::On(expr) => self.walk_expr(expr, scope),
                    JoinConstraint::Using(idents) => {
                        for ident in idents {
                            self.resolve_unqualified(&ident.value, scope);
                        }
                    }
                    JoinConstraint::Natural | JoinConstraint::None => {}
                }
            }
        }
    }

    fn expand_wildcard(&mut self, entry: &ScopeEntry) {
        if let Some(real) = &entry.real_table {
            if let Some(table) = self.schema.table(real) {
                for column in &table.columns {
                    self.found.insert(ColumnRef::new(table.name.clone(), column.name.clone()));
                }
            }
        }
    }

    fn walk_expr(&mut self, expr: &Expr, scope: &[ScopeFrame]) {
        match expr {
            Expr::Identifier(ident) => self.resolve_unqualified(&ident.value, scope),
            Expr::CompoundIdentifier(parts) => {
                if parts.len() >= 2 {
                    let column = &parts[parts.len() - 1].value;
                    let qualifier = &parts[parts.len() - 2].value;
                    self.resolve_qualified(qualifier, column, scope);
                }
            }
            Expr::BinaryOp { left, right, .. } => {
                self.walk_expr(left, scope);
                self.walk_expr(right, scope);
            }
            Expr::UnaryOp { expr, .. }
            | Expr::Nested(expr)
            | Expr::IsNull(expr)
            | Expr::IsNotNull(expr)
            | Expr::IsTrue(expr)
            | Expr::IsNotTrue(expr)
            | Expr::IsFalse(expr)
            | Expr::IsNotFalse(expr)
            | Expr::IsUnknown(expr)
            | Expr::IsNotUnknown(expr)
            | Expr::Collate { expr, .. } => self.walk_expr(expr, scope),
            Expr::Cast { expr, .. } => self.walk_expr(expr, scope),
            Expr::Extract { expr, .. } => self.walk_expr(expr, scope),
            Expr::Ceil { expr, .. } | Expr::Floor { expr, .. } => self.walk_expr(expr, scope),
            Expr::Position { expr, r#in } => {
                self.walk_expr(expr, scope);
                self.walk_expr(r#in, scope);
            }
            Expr::Substring { expr, substring_from, substring_for, .. } => {
                self.walk_expr(expr, scope);
                if let Some(e) = substring_from {
                    self.walk_expr(e, scope);
                }
                if let Some(e) = substring_for {
                    self.walk_expr(e, scope);
                }
            }
            Expr::Trim { expr, trim_what, .. } => {
                self.walk_expr(expr, scope);
                if let Some(e) = trim_what {
                    self.walk_expr(e, scope);
                }
            }
            Expr::IsDistinctFrom(a, b) | Expr::IsNotDistinctFrom(a, b) => {
                self.walk_expr(a, scope);
                self.walk_expr(b, scope);
            }
            Expr::InList { expr, list, .. } => {
                self.walk_expr(expr, scope);
                for e in list {
                    self.walk_expr(e, scope);
                }
            }
            Expr::InSubquery { expr, subquery, .. } => {
                self.walk_expr(expr, scope);
                self.walk_query(subquery, scope);
            }
            Expr::Between { expr, low, high, .. } => {
                self.walk_expr(expr, scope);
                self.walk_expr(low, scope);
                self.walk_expr(high, scope);
            }
            Expr::Like { expr, pattern, .. }
            | Expr::ILike { expr, pattern, .. }
            | Expr::SimilarTo { expr, pattern, .. } => {
                self.walk_expr(expr, scope);
                self.walk_expr(pattern, scope);
            }
            Expr::AnyOp { left, right, .. } | Expr::AllOp { left, right, .. } => {
                self.walk_expr(left, scope);
                self.walk_expr(right, scope);
            }
            Expr::Case { operand, conditions, results, else_result } => {
                if let Some(e) = operand {
                    self.walk_expr(e, scope);
                }
                for e in conditions.iter().chain(results.iter()) {
                    self.walk_expr(e, scope);
                }
                if let Some(e) = else_result {
                    self.walk_expr(e, scope);
                }
            }
            Expr::Exists { subquery, .. } => self.walk_query(subquery, scope),
            Expr::Subquery(subquery) => self.walk_query(subquery, scope),
            Expr::Function(function) => {
                match &function.args {
                    FunctionArguments::List(list) => {
                        for arg in &list.args {
                            let arg_expr = match arg {
                                FunctionArg::Named { arg, .. } => arg,
                                FunctionArg::Unnamed(a) => a,
                            };
                            match arg_expr {
                                FunctionArgExpr::Expr(e) => self.walk_expr(e, scope),
                                FunctionArgExpr::QualifiedWildcard(name) => {
                                    if let Some(qualifier) = name.0.last() {
                                        if let Some(entry) = lookup(scope, &qualifier.value) {
                                            self.expand_wildcard(&entry);
                                        }
                                    }
                                }
                                // COUNT(*) references no column.
                                FunctionArgExpr::Wildcard => {}
                            }
                        }
                    }
                    FunctionArguments::Subquery(subquery) => self.walk_query(subquery, scope),
                    FunctionArguments::None => {}
                }
                if let Some(filter) = &function.filter {
                    self.walk_expr(filter, scope);
                }
            }
            Expr::Tuple(exprs) => {
                for e in exprs {
                    self.walk_expr(e, scope);
                }
            }
            Expr::Interval(interval) => self.walk_expr(&interval.value, scope),
            // Literals and unhandled dialect-specific forms contribute
            // no column references.
            _ => {}
        }
    }

    /// Unqualified name: nearest scope frame with any matching table
    /// wins; within that frame every matching table contributes (recall
    /// over precision for ambiguous names).
    fn resolve_unqualified(&mut self, column: &str, scope: &[ScopeFrame]) {
        for frame in scope.iter().rev() {
            let mut matched = false;
            for entry in frame {
                if let Some(real) = &entry.real_table {
                    if let Some(table) = self.schema.table(real) {
                        if let Some(def) = table.column(column) {
                            self.found
                                .insert(ColumnRef::new(table.name.clone(), def.name.clone()));
                            matched = true;
                        }
                    }
                }
            }
            if matched {
                return;
            }
        }
    }

    /// Qualified name: resolve the qualifier as an alias in scope, then
    /// fall back to treating it as a bare schema table name.
    fn resolve_qualified(&mut self, qualifier: &str, column: &str, scope: &[ScopeFrame]) {
        if let Some(entry) = lookup(scope, qualifier) {
            if let Some(real) = &entry.real_table {
                if let Some(table) = self.schema.table(real) {
                    if let Some(def) = table.column(column) {
                        self.found.insert(ColumnRef::new(table.name.clone(), def.name.clone()));
                    }
                }
            }
            return; // derived relations expose no schema columns
        }
        if let Some(table) = self.schema.table(qualifier) {
            if let Some(def) = table.column(column) {
                self.found.insert(ColumnRef::new(table.name.clone(), def.name.clone()));
            }
        }
    }
}

/// Nearest-first lookup of a visible relation name.
fn lookup(scope: &[ScopeFrame], name: &str) -> Option<ScopeEntry> {
    for frame in scope.iter().rev() {
        if let Some(entry) = frame.iter().find(|e| e.visible.eq_ignore_ascii_case(name)) {
            return Some(entry.clone());
        }
    }
    None
}

fn join_constraint(join: &Join) -> Option<&JoinConstraint> {
    match &join.join_operator {
        JoinOperator::Inner(c)
        | JoinOperator::LeftOuter(c)
        | JoinOperator::RightOuter(c)
        | JoinOperator::FullOuter(c)
        | JoinOperator::LeftSemi(c)
        | JoinOperator::RightSemi(c)
        | JoinOperator::LeftAnti(c)
        | JoinOperator::RightAnti(c)
        | JoinOperator::AsOf { constraint: c, .. } => Some(c),
        JoinOperator::CrossJoin | JoinOperator::CrossApply | JoinOperator::OuterApply => None,
    }
}

/// Widen the candidate set with similar/duplicate partner columns — one
/// pass over the relations, no transitive closure.
pub fn augment_columns(c: &ColumnSet, relations: &[InterColumnRelation]) -> ColumnSet {
    let mut out = c.clone();
    for relation in relations {
        if !matches!(relation.kind, RelationKind::Similar | RelationKind::Duplicate) {
            continue;
        }
        if c.contains(&relation.a) {
            out.insert(relation.b.clone());
        }
        if c.contains(&relation.b) {
            out.insert(relation.a.clone());
        }
    }
    out
}

/// Render the filtered schema for the member columns, always pulling in
/// the primary keys of involved tables and the foreign keys linking
/// them so generation has legal join routes.
pub fn build_filtered_schema(
    c: &ColumnSet,
    context: &MetadataContext,
    schema: &RawSchema,
) -> Result<FilteredSchema, LinkingError> {
    if c.is_empty() {
        return Err(LinkingError::EmptyColumnSet);
    }
    let mut expanded: BTreeSet<ColumnRef> = c
        .iter()
        .filter(|column| schema.contains(column))
        .cloned()
        .collect();
    if expanded.is_empty() {
        return Err(LinkingError::EmptyColumnSet);
    }

    let involved: BTreeSet<String> = expanded.iter().map(|c| c.table.clone()).collect();
    for table_name in &involved {
        let Some(table) = schema.table(table_name) else { continue };
        for pk in table.primary_key_columns() {
            expanded.insert(ColumnRef::new(table.name.clone(), pk.name.clone()));
        }
        for fk in &table.foreign_keys {
            let other_involved =
                involved.iter().any(|t| t.eq_ignore_ascii_case(&fk.to_table));
            if other_involved {
                expanded.insert(ColumnRef::new(table.name.clone(), fk.from_column.clone()));
                expanded.insert(ColumnRef::new(fk.to_table.clone(), fk.to_column.clone()));
            }
        }
    }

    let rendered_text = crate::profiler::render_schema_text(schema, context, Some(&expanded));
    Ok(FilteredSchema {
        columns: ColumnSet { members: expanded },
        rendered_text,
        source_mode: context.mode,
    })
}

/// Full-schema fallback used when the draft never parsed.
pub fn full_filtered_schema(context: &MetadataContext, schema: &RawSchema) -> FilteredSchema {
    FilteredSchema {
        columns: ColumnSet::from_iter(schema.all_columns()),
        rendered_text: crate::profiler::render_schema_text(schema, context, None),
        source_mode: context.mode,
    }
}

/// The whole linking phase: draft, parse, augment, render. An
/// unparseable draft degrades to the full schema.
pub fn link_schema(
    provider: &dyn ChatProvider,
    question: &str,
    evidence: Option<&str>,
    context: &MetadataContext,
    schema: &RawSchema,
    retries: usize,
    temperature: f64,
) -> Result<(FilteredSchema, DraftSql), LinkingError> {
    let draft =
        generate_draft_sql(provider, question, evidence, context, schema, retries, temperature)?;
    if !draft.parsed {
        return Ok((full_filtered_schema(context, schema), draft));
    }
    let references = match extract_references(&draft.sql, schema) {
        Ok(refs) => refs,
        Err(_) => return Ok((full_filtered_schema(context, schema), draft)),
    };
    if references.is_empty() {
        return Ok((full_filtered_schema(context, schema), draft));
    }
    let augmented = augment_columns(&references, &context.relations);
    let filtered = build_filtered_schema(&augmented, context, schema)?;
    Ok((filtered, draft))
}

/// Column precision/recall/F1 of a predicted set against the references
/// of a gold query.
pub fn column_metrics(predicted: &ColumnSet, gold: &ColumnSet) -> (f64, f64, f64) {
    if predicted.is_empty() && gold.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let overlap = predicted.iter().filter(|c| gold.contains(c)).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { overlap / predicted.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { overlap / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbcore::{ColumnDef, TableDef};
    use crate::gateway::MockProvider;
    use crate::profiler::{Cardinality, ContextMode};

    fn community_schema() -> RawSchema {
        let col = |name: &str, ty: &str, pk: bool| ColumnDef {
            name: name.into(),
            declared_type: ty.into(),
            is_primary_key: pk,
        };
        RawSchema {
            tables: vec![
                TableDef {
                    name: "users".into(),
                    columns: vec![col("Id", "INTEGER", true), col("DisplayName", "TEXT", false)],
                    foreign_keys: vec![],
                },
                TableDef {
                    name: "posts".into(),
                    columns: vec![
                        col("Id", "INTEGER", true),
                        col("OwnerUserId", "INTEGER", false),
                        col("ViewCount", "INTEGER", false),
                        col("OwnerDisplayName", "TEXT", false),
                    ],
                    foreign_keys: vec![crate::dbcore::ForeignKey {
                        from_column: "OwnerUserId".into(),
                        to_table: "users".into(),
                        to_column: "Id".into(),
                    }],
                },
            ],
        }
    }

    fn refs(pairs: &[(&str, &str)]) -> ColumnSet {
        ColumnSet::from_iter(pairs.iter().map(|(t, c)| ColumnRef::new(*t, *c)))
    }

    fn empty_context(schema: &RawSchema, relations: Vec<InterColumnRelation>) -> MetadataContext {
        let mut per_column_text = std::collections::BTreeMap::new();
        for column in schema.all_columns() {
            let text = format!("The `{}` column in the `{}` table.", column.column, column.table);
            per_column_text.insert(column, text);
        }
        MetadataContext {
            mode: ContextMode::Complete,
            per_column_text,
            per_table_text: std::collections::BTreeMap::new(),
            relations,
        }
    }

    fn similar(a: (&str, &str), b: (&str, &str)) -> InterColumnRelation {
        InterColumnRelation {
            a: ColumnRef::new(a.0, a.1),
            b: ColumnRef::new(b.0, b.1),
            kind: RelationKind::Similar,
            join_path: None,
            fd_ab: None,
            fd_ba: None,
            cardinality: Cardinality::Unknown,
            note: None,
        }
    }

    #[test]
    fn resolves_the_top_viewed_post_query() {
        let schema = community_schema();
        let sql = "SELECT users.DisplayName FROM users JOIN posts \
                   ON users.Id = posts.OwnerUserId ORDER BY posts.ViewCount DESC LIMIT 1";
        let got = extract_references(sql, &schema).unwrap();
        let want = refs(&[
            ("posts", "OwnerUserId"),
            ("posts", "ViewCount"),
            ("users", "DisplayName"),
            ("users", "Id"),
        ]);
        assert_eq!(got, want);
    }

    #[test]
    fn literal_only_query_references_nothing() {
        let schema = community_schema();
        assert!(extract_references("SELECT 1", &schema).unwrap().is_empty());
    }

    #[test]
    fn aliases_resolve_to_real_tables() {
        let schema = community_schema();
        let sql = "SELECT u.DisplayName FROM users u WHERE u.Id IN \
                   (SELECT p.OwnerUserId FROM posts p WHERE p.ViewCount > 100)";
        let got = extract_references(sql, &schema).unwrap();
        let want = refs(&[
            ("posts", "OwnerUserId"),
            ("posts", "ViewCount"),
            ("users", "DisplayName"),
            ("users", "Id"),
        ]);
        assert_eq!(got, want);
    }

    #[test]
    fn unqualified_ambiguous_name_keeps_all_candidates() {
        let schema = community_schema();
        let sql = "SELECT Id FROM users JOIN posts ON users.Id = posts.OwnerUserId";
        let got = extract_references(sql, &schema).unwrap();
        assert!(got.contains(&ColumnRef::new("users", "Id")));
        assert!(got.contains(&ColumnRef::new("posts", "Id")));
    }

    #[test]
    fn cte_names_shadow_schema_tables() {
        let schema = community_schema();
        let sql = "WITH tops AS (SELECT OwnerUserId FROM posts WHERE ViewCount > 10) \
                   SELECT u.DisplayName FROM users u JOIN tops ON u.Id = tops.OwnerUserId";
        let got = extract_references(sql, &schema).unwrap();
        let want = refs(&[
            ("posts", "OwnerUserId"),
            ("posts", "ViewCount"),
            ("users", "DisplayName"),
            ("users", "Id"),
        ]);
        assert_eq!(got, want);
    }

    #[test]
    fn wildcard_expands_the_visible_table() {
        let schema = community_schema();
        let got = extract_references("SELECT * FROM users", &schema).unwrap();
        assert_eq!(got, refs(&[("users", "Id"), ("users", "DisplayName")]));
    }

    #[test]
    fn augmentation_is_single_pass_and_monotone() {
        let relations = vec![
            similar(("users", "DisplayName"), ("posts", "OwnerDisplayName")),
            similar(("posts", "OwnerDisplayName"), ("posts", "ViewCount")),
        ];
        let c = refs(&[("users", "DisplayName")]);
        let out = augment_columns(&c, &relations);
        // Direct partner joins the set, its own partner does not (no
        // transitive closure).
        assert!(out.contains(&ColumnRef::new("posts", "OwnerDisplayName")));
        assert!(!out.contains(&ColumnRef::new("posts", "ViewCount")));
        assert!(c.iter().all(|m| out.contains(m)));

        // No relations: identity.
        assert_eq!(augment_columns(&c, &[]), c);

        // Order-independence.
        let mut reversed = relations.clone();
        reversed.reverse();
        assert_eq!(augment_columns(&c, &relations), augment_columns(&c, &reversed));
    }

    #[test]
    fn filtered_schema_includes_join_routes() {
        let schema = community_schema();
        let context = empty_context(&schema, vec![]);
        let c = refs(&[("posts", "ViewCount"), ("users", "DisplayName")]);
        let filtered = build_filtered_schema(&c, &context, &schema).unwrap();

        // PKs of both tables and the FK endpoints are pulled in.
        assert!(filtered.columns.contains(&ColumnRef::new("users", "Id")));
        assert!(filtered.columns.contains(&ColumnRef::new("posts", "Id")));
        assert!(filtered.columns.contains(&ColumnRef::new("posts", "OwnerUserId")));
        assert!(filtered
            .rendered_text
            .contains("Foreign key: `posts`.`OwnerUserId` references `users`.`Id`."));

        let empty = ColumnSet::new();
        assert!(matches!(
            build_filtered_schema(&empty, &context, &schema),
            Err(LinkingError::EmptyColumnSet)
        ));
    }

    #[test]
    fn single_column_set_still_renders_its_pk() {
        let schema = community_schema();
        let context = empty_context(&schema, vec![]);
        let c = refs(&[("users", "DisplayName")]);
        let filtered = build_filtered_schema(&c, &context, &schema).unwrap();
        assert!(filtered.columns.contains(&ColumnRef::new("users", "Id")));
        // users has no FK to an uninvolved table, so posts stays out.
        assert!(filtered.columns.iter().all(|c| c.table == "users"));
    }

    #[test]
    fn draft_retries_then_flags_unparseable() {
        let schema = community_schema();
        let context = empty_context(&schema, vec![]);
        let provider = MockProvider::new(["nonsense", "more nonsense", "still not sql"]);
        let draft =
            generate_draft_sql(&provider, "q", None, &context, &schema, 3, 0.1).unwrap();
        assert!(!draft.parsed);
        assert_eq!(draft.attempts, 3);
        assert_eq!(provider.remaining(), 0);
    }

    #[test]
    fn draft_stops_at_first_parseable_attempt() {
        let schema = community_schema();
        let context = empty_context(&schema, vec![]);
        let provider = MockProvider::new([
            "no sql here",
            "```sql\nSELECT DisplayName FROM users\n```",
            "unused",
        ]);
        let draft =
            generate_draft_sql(&provider, "q", None, &context, &schema, 3, 0.1).unwrap();
        assert!(draft.parsed);
        assert_eq!(draft.attempts, 2);
        assert_eq!(draft.sql, "SELECT DisplayName FROM users");
        assert_eq!(provider.remaining(), 1);
    }

    #[test]
    fn linking_falls_back_to_full_schema_on_bad_draft() {
        let schema = community_schema();
        let context = empty_context(&schema, vec![]);
        let provider = MockProvider::new(["x", "y", "z"]);
        let (filtered, draft) =
            link_schema(&provider, "q", None, &context, &schema, 3, 0.1).unwrap();
        assert!(!draft.parsed);
        assert_eq!(filtered.columns.len(), schema.all_columns().len());
    }

    #[test]
    fn linking_augments_with_similar_columns() {
        let schema = community_schema();
        let relations =
            vec![similar(("users", "DisplayName"), ("posts", "OwnerDisplayName"))];
        let context = empty_context(&schema, relations);
        let provider = MockProvider::new([
            "```sql\nSELECT users.DisplayName FROM users JOIN posts \
             ON users.Id = posts.OwnerUserId ORDER BY posts.ViewCount DESC LIMIT 1\n```",
        ]);
        let (filtered, draft) =
            link_schema(&provider, "q", None, &context, &schema, 3, 0.1).unwrap();
        assert!(draft.parsed);
        assert!(filtered.columns.contains(&ColumnRef::new("posts", "OwnerDisplayName")));
    }

    #[test]
    fn metrics_are_hand_computable() {
        let predicted = refs(&[("users", "Id"), ("users", "DisplayName"), ("posts", "Id")]);
        let gold = refs(&[("users", "Id"), ("users", "DisplayName"), ("posts", "ViewCount")]);
        let (precision, recall, f1) = column_metrics(&predicted, &gold);
        assert!((precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);

        let (p_empty, r_empty, f_empty) = column_metrics(&ColumnSet::new(), &gold);
        assert_eq!((p_empty, r_empty, f_empty), (0.0, 0.0, 0.0));
    }
}
