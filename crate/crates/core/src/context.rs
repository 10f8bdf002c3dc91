//! Semantic context: a table summary with underlined column names, a concept
//! hierarchy that partitions the columns, and one summary per column.
//!
//! Every artifact, whether it comes from the model or from a user edit, has
//! to pass the same validators before it is accepted.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use indexmap::IndexMap;
use rayon::prelude::*;
use regex::Regex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value as Json};

use crate::ingest::ColumnTable;
use crate::llm::{complete_validated, extract_fenced_json, ChatProvider, ChatRequest, LlmError};

pub const TABLE_SUMMARY_STEP: &str = "context/table_summary";
pub const HIERARCHY_STEP: &str = "context/hierarchy";
pub const COLUMN_SUMMARIES_STEP: &str = "context/column_summaries";
/// Rows shown to the model when summarizing the table.
pub const SUMMARY_SAMPLE_ROWS: usize = 5;
/// Rows of each group's projection shown when summarizing columns.
pub const GROUP_SAMPLE_ROWS: usize = 10;

const SYSTEM: &str = "You are a careful data analyst helping document a relational table.";

static UNDERLINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<u>(.*?)</u>").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("edit rejected: {0}")]
    EditRejected(String),
}

/// Id of the model call that summarizes one leaf group.
pub fn column_summary_call_id(leaf_path: &str) -> String {
    format!("{COLUMN_SUMMARIES_STEP}/{leaf_path}")
}

/// CSV text of the first `n` rows of the given columns, header included.
pub fn sample_csv(t: &ColumnTable, cols: &[usize], n: usize) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let header: Vec<&str> = cols.iter().map(|&c| t.schema()[c].name.as_str()).collect();
    w.write_record(&header).expect("in-memory write");
    for r in 0..n.min(t.row_count()) {
        w.write_record(t.project_row(r, cols).iter().map(|v| v.to_string()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

// ---------------------------------------------------------------------------
// Table summary

/// Checks that every column name appears inside some `<u>...</u>` span.
/// Matching is exact and case-sensitive after trimming the span text.
pub fn validate_underlines<S: AsRef<str>>(text: &str, columns: &[S]) -> Result<(), String> {
    let underlined: HashSet<&str> = UNDERLINE
        .captures_iter(text)
        .map(|c| c.get(1).expect("group").as_str().trim())
        .collect();
    let missing: Vec<&str> = columns
        .iter()
        .map(AsRef::as_ref)
        .filter(|c| !underlined.contains(c))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "these columns are not underlined with <u></u>: {}",
            missing.join(", ")
        ))
    }
}

pub fn summarize_table(
    t: &ColumnTable,
    docs: Option<&str>,
    llm: &dyn ChatProvider,
    max_retries: usize,
) -> Result<String, ContextError> {
    let all: Vec<usize> = (0..t.column_count()).collect();
    let mut user = format!(
        "Table \"{}\" has {} rows and these columns: {}.\n\nFirst rows:\n{}\n",
        t.name(),
        t.row_count(),
        t.column_names().join(", "),
        sample_csv(t, &all, SUMMARY_SAMPLE_ROWS)
    );
    if let Some(d) = docs.filter(|d| !d.trim().is_empty()) {
        user.push_str(&format!("\nDocumentation supplied by the user:\n{d}\n"));
    }
    user.push_str(
        "\nSummarize what this table is about in a short paragraph. Mention every column \
         and wrap each column name in <u></u>, spelled exactly as in the header.",
    );
    let req = ChatRequest::new(TABLE_SUMMARY_STEP, SYSTEM, user)
        .with_schema("Answer with plain text only. Every column name must appear as <u>ColumnName</u>.");
    let names = t.column_names();
    let resp = complete_validated(llm, &req, max_retries, |raw| {
        let text = raw.trim();
        validate_underlines(text, &names).map(|_| text.to_string())
    })?;
    Ok(resp.parsed)
}

// ---------------------------------------------------------------------------
// Attribute hierarchy

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeContent {
    Concepts(Vec<ConceptNode>),
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNode {
    pub name: String,
    pub content: NodeContent,
}

/// A tree of named concepts whose leaves list columns.
///
/// The JSON form nests objects keyed by concept name and ends in arrays of
/// column names: `{"Patient": {"Identification": ["Id", "SSN"]}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeHierarchy {
    pub roots: Vec<ConceptNode>,
}

/// A leaf group: its `/`-joined concept path and its columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf<'a> {
    pub path: String,
    pub columns: &'a [String],
}

impl AttributeHierarchy {
    pub fn from_json(v: &Json) -> Result<Self, String> {
        fn nodes(map: &Map<String, Json>, at: &str) -> Result<Vec<ConceptNode>, String> {
            if map.is_empty() {
                return Err(format!("concept {at} has no children"));
            }
            map.iter()
                .map(|(name, child)| {
                    let here = if at == "the top level" { name.clone() } else { format!("{at}/{name}") };
                    let content = match child {
                        Json::Object(m) => NodeContent::Concepts(nodes(m, &here)?),
                        Json::Array(items) => NodeContent::Columns(
                            items
                                .iter()
                                .map(|i| match i {
                                    Json::String(s) => Ok(s.clone()),
                                    other => Err(format!("{here} lists {other}, expected a column name string")),
                                })
                                .collect::<Result<_, _>>()?,
                        ),
                        other => {
                            return Err(format!("{here} must be an object or a list of column names, found {other}"))
                        }
                    };
                    Ok(ConceptNode {
                        name: name.clone(),
                        content,
                    })
                })
                .collect()
        }
        match v {
            Json::Object(m) => Ok(AttributeHierarchy {
                roots: nodes(m, "the top level")?,
            }),
            _ => Err("the hierarchy must be a JSON object".into()),
        }
    }

    pub fn to_json(&self) -> Json {
        fn nodes(ns: &[ConceptNode]) -> Json {
            Json::Object(
                ns.iter()
                    .map(|n| {
                        let v = match &n.content {
                            NodeContent::Concepts(c) => nodes(c),
                            NodeContent::Columns(cols) => json!(cols),
                        };
                        (n.name.clone(), v)
                    })
                    .collect(),
            )
        }
        nodes(&self.roots)
    }

    /// Leaf groups in document order.
    pub fn leaves(&self) -> Vec<Leaf<'_>> {
        fn walk<'a>(ns: &'a [ConceptNode], prefix: &str, out: &mut Vec<Leaf<'a>>) {
            for n in ns {
                let path = if prefix.is_empty() {
                    n.name.clone()
                } else {
                    format!("{prefix}/{}", n.name)
                };
                match &n.content {
                    NodeContent::Concepts(c) => walk(c, &path, out),
                    NodeContent::Columns(cols) => out.push(Leaf { path, columns: cols }),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.roots, "", &mut out);
        out
    }

    /// Path of the leaf holding `column`.
    pub fn leaf_of(&self, column: &str) -> Option<String> {
        self.leaves()
            .into_iter()
            .find(|l| l.columns.iter().any(|c| c == column))
            .map(|l| l.path)
    }

    /// Every column in leaf order.
    pub fn columns(&self) -> Vec<&str> {
        self.leaves()
            .into_iter()
            .flat_map(|l| l.columns.iter().map(String::as_str))
            .collect()
    }
}

impl Serialize for AttributeHierarchy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttributeHierarchy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Json::deserialize(d)?;
        AttributeHierarchy::from_json(&v).map_err(D::Error::custom)
    }
}

/// Checks that the leaf lists partition the schema's columns.
pub fn validate_partition<S: AsRef<str>>(h: &AttributeHierarchy, columns: &[S]) -> Result<(), String> {
    let mut counts: IndexMap<&str, usize> = IndexMap::new();
    for c in h.columns() {
        *counts.entry(c).or_insert(0) += 1;
    }
    let schema: HashSet<&str> = columns.iter().map(AsRef::as_ref).collect();
    let missing: Vec<&str> = columns
        .iter()
        .map(AsRef::as_ref)
        .filter(|c| !counts.contains_key(c))
        .collect();
    let duplicated: Vec<&str> = counts.iter().filter(|(_, n)| **n > 1).map(|(c, _)| *c).collect();
    let unknown: Vec<&str> = counts.keys().filter(|c| !schema.contains(*c)).copied().collect();
    let mut problems = Vec::new();
    if !missing.is_empty() {
        problems.push(format!("missing=[{}]", missing.join(", ")));
    }
    if !duplicated.is_empty() {
        problems.push(format!("duplicated=[{}]", duplicated.join(", ")));
    }
    if !unknown.is_empty() {
        problems.push(format!("unknown=[{}]", unknown.join(", ")));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "each column must appear in exactly one list: {}",
            problems.join("; ")
        ))
    }
}

fn parse_hierarchy(raw: &str, columns: &[&str]) -> Result<AttributeHierarchy, String> {
    let map = extract_fenced_json(raw).map_err(|e| e.to_string())?;
    let h = AttributeHierarchy::from_json(&Json::Object(map))?;
    validate_partition(&h, columns)?;
    Ok(h)
}

pub fn group_columns(
    t: &ColumnTable,
    summary: &str,
    llm: &dyn ChatProvider,
    max_retries: usize,
) -> Result<AttributeHierarchy, ContextError> {
    let user = format!(
        "Table summary:\n{summary}\n\nColumns: {}\n\nGroup the columns into a hierarchy of concepts. \
         Internal levels are concept names; the final level is a list of column names. \
         Each column must appear in exactly one list.",
        t.column_names().join(", ")
    );
    let req = ChatRequest::new(HIERARCHY_STEP, SYSTEM, user).with_schema(
        "Reply with a JSON object in a ```json fenced block, for example \
         {\"Concept\": {\"Sub concept\": [\"col_a\", \"col_b\"]}}.",
    );
    let names = t.column_names();
    Ok(complete_validated(llm, &req, max_retries, |raw| parse_hierarchy(raw, &names))?.parsed)
}

// ---------------------------------------------------------------------------
// Column summaries

fn parse_group_summaries(raw: &str, group: &[String]) -> Result<IndexMap<String, String>, String> {
    let map = extract_fenced_json(raw).map_err(|e| e.to_string())?;
    let expected: HashSet<&str> = group.iter().map(String::as_str).collect();
    let missing: Vec<&str> = group
        .iter()
        .map(String::as_str)
        .filter(|c| !map.contains_key(*c))
        .collect();
    let extra: Vec<&str> = map
        .keys()
        .map(String::as_str)
        .filter(|k| !expected.contains(k))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(format!(
            "keys must be exactly the group's columns; missing=[{}] unexpected=[{}]",
            missing.join(", "),
            extra.join(", ")
        ));
    }
    group
        .iter()
        .map(|c| match &map[c.as_str()] {
            Json::String(s) if !s.trim().is_empty() => Ok((c.clone(), s.trim().to_string())),
            _ => Err(format!("summary for {c} must be a non-empty string")),
        })
        .collect()
}

/// One model call per leaf group, run in parallel. The merged map follows
/// schema order.
pub fn summarize_columns(
    t: &ColumnTable,
    summary: &str,
    h: &AttributeHierarchy,
    llm: &dyn ChatProvider,
    max_retries: usize,
) -> Result<IndexMap<String, String>, ContextError> {
    let leaves = h.leaves();
    let parts: Vec<IndexMap<String, String>> = leaves
        .par_iter()
        .map(|leaf| {
            let idx: Vec<usize> = leaf.columns.iter().filter_map(|c| t.column_index(c)).collect();
            let user = format!(
                "Table summary:\n{summary}\n\nColumn group \"{}\" sample rows:\n{}\n\
                 Summarize the meaning of each of these columns in one sentence: {}.",
                leaf.path,
                sample_csv(t, &idx, GROUP_SAMPLE_ROWS),
                leaf.columns.join(", ")
            );
            let req = ChatRequest::new(column_summary_call_id(&leaf.path), SYSTEM, user).with_schema(
                "Reply with a JSON object in a ```json fenced block mapping each column name to its summary.",
            );
            complete_validated(llm, &req, max_retries, |raw| parse_group_summaries(raw, leaf.columns))
                .map(|r| r.parsed)
        })
        .collect::<Result<_, _>>()?;
    let mut merged: HashMap<String, String> = parts.into_iter().flatten().collect();
    let ordered: IndexMap<String, String> = t
        .column_names()
        .into_iter()
        .filter_map(|c| merged.remove(c).map(|s| (c.to_string(), s)))
        .collect();
    validate_column_summaries(&ordered, &t.column_names()).map_err(|d| {
        LlmError::ValidationExhausted {
            step_id: COLUMN_SUMMARIES_STEP.into(),
            diagnostics: vec![d],
        }
    })?;
    Ok(ordered)
}

/// Every schema column has a non-empty summary and nothing else is present.
pub fn validate_column_summaries<S: AsRef<str>>(
    summaries: &IndexMap<String, String>,
    columns: &[S],
) -> Result<(), String> {
    let schema: HashSet<&str> = columns.iter().map(AsRef::as_ref).collect();
    let missing: Vec<&str> = columns
        .iter()
        .map(AsRef::as_ref)
        .filter(|c| summaries.get(*c).is_none_or(|s| s.trim().is_empty()))
        .collect();
    let unknown: Vec<&str> = summaries
        .keys()
        .map(String::as_str)
        .filter(|k| !schema.contains(k))
        .collect();
    if missing.is_empty() && unknown.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "column summaries must cover exactly the schema; missing=[{}] unknown=[{}]",
            missing.join(", "),
            unknown.join(", ")
        ))
    }
}

// ---------------------------------------------------------------------------
// Assembled context and edits

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SemanticContext {
    #[serde(rename = "Table Summary")]
    pub table_summary: String,
    #[serde(rename = "Attribute Hierarchy")]
    pub hierarchy: AttributeHierarchy,
    #[serde(rename = "Column Summary")]
    pub column_summaries: IndexMap<String, String>,
    #[serde(skip)]
    pub docs: Option<String>,
}

impl SemanticContext {
    /// Runs all three validators.
    pub fn validate<S: AsRef<str>>(&self, columns: &[S]) -> Result<(), String> {
        validate_underlines(&self.table_summary, columns)?;
        validate_partition(&self.hierarchy, columns)?;
        validate_column_summaries(&self.column_summaries, columns)
    }
}

/// A replacement for one context artifact.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "part", content = "value", rename_all = "snake_case")]
pub enum ContextEdit {
    TableSummary(String),
    Hierarchy(AttributeHierarchy),
    ColumnSummary { column: String, text: String },
}

/// Applies an edit after running the same validator the model output had to
/// pass. The original context is left untouched on rejection.
pub fn apply_user_edit<S: AsRef<str>>(
    ctx: &SemanticContext,
    edit: &ContextEdit,
    columns: &[S],
) -> Result<SemanticContext, ContextError> {
    let mut next = ctx.clone();
    match edit {
        ContextEdit::TableSummary(text) => {
            validate_underlines(text, columns).map_err(ContextError::EditRejected)?;
            next.table_summary = text.clone();
        }
        ContextEdit::Hierarchy(h) => {
            validate_partition(h, columns).map_err(ContextError::EditRejected)?;
            next.hierarchy = h.clone();
        }
        ContextEdit::ColumnSummary { column, text } => {
            if !columns.iter().any(|c| c.as_ref() == column) {
                return Err(ContextError::EditRejected(format!("unknown column \"{column}\"")));
            }
            if text.trim().is_empty() {
                return Err(ContextError::EditRejected(format!("summary for {column} must not be empty")));
            }
            next.column_summaries.insert(column.clone(), text.trim().to_string());
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_csv, CsvOptions};
    use crate::llm::{MockProvider, MockScript};

    fn table() -> ColumnTable {
        parse_csv("id,Name,age\n1,a,3\n2,b,4\n", "people", CsvOptions::default()).unwrap()
    }

    fn hierarchy(v: Json) -> AttributeHierarchy {
        AttributeHierarchy::from_json(&v).unwrap()
    }

    #[test]
    fn underline_rules() {
        let cols = ["id", "Name", "age"];
        assert!(validate_underlines("<u>id</u>, <u>Name</u> and <u> age </u>", &cols).is_ok());
        let err = validate_underlines("<u>Id</u>, <u>Name</u>, <u>age</u>", &cols).unwrap_err();
        assert!(err.ends_with(": id"));
        let err = validate_underlines("", &cols).unwrap_err();
        assert!(err.contains("id, Name, age"));
    }

    #[test]
    fn partition_rules() {
        let cols = ["a", "b", "c"];
        assert!(validate_partition(&hierarchy(json!({"X": {"Y": ["a", "b"]}, "Z": ["c"]})), &cols).is_ok());
        let err = validate_partition(&hierarchy(json!({"X": ["a", "b"]})), &cols).unwrap_err();
        assert!(err.contains("missing=[c]"));
        let err = validate_partition(&hierarchy(json!({"X": ["a", "b"], "Y": ["b", "c"]})), &cols).unwrap_err();
        assert!(err.contains("duplicated=[b]") && !err.contains("missing"));
        let err = validate_partition(&hierarchy(json!({"X": ["a", "b", "c", "d"]})), &cols).unwrap_err();
        assert!(err.contains("unknown=[d]"));
    }

    #[test]
    fn hierarchy_json_round_trip_keeps_order() {
        let v = json!({"Patient": {"Identification": ["Id", "SSN"], "Name": ["First"]}});
        let h = hierarchy(v.clone());
        assert_eq!(h.to_json(), v);
        let paths: Vec<String> = h.leaves().into_iter().map(|l| l.path).collect();
        assert_eq!(paths, vec!["Patient/Identification", "Patient/Name"]);
        assert_eq!(h.leaf_of("SSN").as_deref(), Some("Patient/Identification"));
        assert!(AttributeHierarchy::from_json(&json!({"X": 3})).is_err());
        assert!(AttributeHierarchy::from_json(&json!(["a"])).is_err());
    }

    #[test]
    fn summary_retries_after_missing_underline() {
        let mut script = MockScript::new();
        script.push(TABLE_SUMMARY_STEP, "People with <u>id</u> and <u>Name</u>.");
        script.push(TABLE_SUMMARY_STEP, "People with <u>id</u>, <u>Name</u>, <u>age</u>.");
        let p = MockProvider::new(script);
        let s = summarize_table(&table(), None, &p, 3).unwrap();
        assert!(s.contains("<u>age</u>"));
        assert_eq!(p.call_count(), 2);
    }

    #[test]
    fn grouping_retries_on_duplicate() {
        let mut script = MockScript::new();
        script.push(HIERARCHY_STEP, "```json\n{\"P\": {\"A\": [\"id\", \"Name\"], \"B\": [\"Name\", \"age\"]}}\n```");
        script.push(HIERARCHY_STEP, "```json\n{\"P\": {\"A\": [\"id\", \"Name\"], \"B\": [\"age\"]}}\n```");
        let p = MockProvider::new(script);
        let h = group_columns(&table(), "s", &p, 3).unwrap();
        assert_eq!(h.leaves().len(), 2);
        assert_eq!(p.call_count(), 2);
    }

    #[test]
    fn column_summaries_retry_only_failing_group() {
        let h = hierarchy(json!({"P": {"A": ["id", "Name"], "B": ["age"]}}));
        let mut script = MockScript::new();
        script.push(
            column_summary_call_id("P/A"),
            "```json\n{\"id\": \"UUID (Universally Unique Identifier).\"}\n```",
        );
        script.push(
            column_summary_call_id("P/A"),
            "```json\n{\"id\": \"UUID (Universally Unique Identifier).\", \"Name\": \"Given name.\"}\n```",
        );
        script.push(column_summary_call_id("P/B"), "```json\n{\"age\": \"Age in years.\"}\n```");
        let p = MockProvider::new(script);
        let s = summarize_columns(&table(), "s", &h, &p, 3).unwrap();
        assert_eq!(s.keys().collect::<Vec<_>>(), vec!["id", "Name", "age"]);
        assert_eq!(s["id"], "UUID (Universally Unique Identifier).");
        assert_eq!(p.call_count(), 3);
    }

    fn context() -> SemanticContext {
        SemanticContext {
            table_summary: "<u>id</u> <u>Name</u> <u>age</u>".into(),
            hierarchy: hierarchy(json!({"P": ["id", "Name", "age"]})),
            column_summaries: [("id", "x"), ("Name", "y"), ("age", "z")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            docs: None,
        }
    }

    #[test]
    fn edits_run_validators() {
        let cols = ["id", "Name", "age"];
        let ctx = context();
        assert!(ctx.validate(&cols).is_ok());
        let err = apply_user_edit(&ctx, &ContextEdit::TableSummary("<u>id</u> <u>Name</u>".into()), &cols).unwrap_err();
        assert_eq!(
            err,
            ContextError::EditRejected("these columns are not underlined with <u></u>: age".into())
        );
        let reshuffled = hierarchy(json!({"Q": ["age"], "R": ["id", "Name"]}));
        let next = apply_user_edit(&ctx, &ContextEdit::Hierarchy(reshuffled.clone()), &cols).unwrap();
        assert_eq!(next.hierarchy, reshuffled);
        let next = apply_user_edit(
            &ctx,
            &ContextEdit::ColumnSummary {
                column: "age".into(),
                text: "Years since birth.".into(),
            },
            &cols,
        )
        .unwrap();
        assert_eq!(next.column_summaries["age"], "Years since birth.");
        assert!(next.validate(&cols).is_ok());
    }

    #[test]
    fn edit_wire_format() {
        let e: ContextEdit = serde_json::from_value(json!({"part": "hierarchy", "value": {"P": ["a"]}})).unwrap();
        assert!(matches!(e, ContextEdit::Hierarchy(_)));
        let e: ContextEdit =
            serde_json::from_value(json!({"part": "column_summary", "value": {"column": "a", "text": "t"}})).unwrap();
        assert!(matches!(e, ContextEdit::ColumnSummary { .. }));
    }

    #[test]
    fn serializes_with_document_keys() {
        let v = serde_json::to_value(context()).unwrap();
        assert_eq!(v["Attribute Hierarchy"]["P"][2], "age");
        assert!(v.get("Table Summary").is_some() && v.get("Column Summary").is_some());
    }
}
