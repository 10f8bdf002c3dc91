//! Semantic expectations, reviews and higher-order column types.
//!
//! For each error kind the model first states what the data *should* look
//! like given only the context (a [`SemProfile`]). A review then compares that
//! expectation with the statistical evidence. Reviews are gated: when the
//! statistics show no discrepancy the verdict is "no error" without asking
//! the model.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use crate::context::sample_csv;
use crate::ingest::{ColumnTable, PrimitiveType};
use crate::llm::{complete_validated, extract_fenced_json, ChatProvider, ChatRequest, LlmError};
use crate::statprofile::{self, NamedRow, StatError, StatEvidence, Target};

/// Reasoning recorded when a review is skipped by its gate.
pub const NO_DISCREPANCY: &str = "no statistical discrepancy";
/// Rows shown when classifying a column group.
pub const CLASSIFY_SAMPLE_ROWS: usize = 5;

const SYSTEM: &str = "You are a meticulous data quality analyst. Reason step by step before answering.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Duplication,
    ColumnType,
    UniqueKey,
    Dmv,
    MissingValue,
    NumericOutlier,
    StringOutlier,
    MissingRecord,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 8] = [
        ErrorKind::Duplication,
        ErrorKind::ColumnType,
        ErrorKind::UniqueKey,
        ErrorKind::Dmv,
        ErrorKind::MissingValue,
        ErrorKind::NumericOutlier,
        ErrorKind::StringOutlier,
        ErrorKind::MissingRecord,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Duplication => "Duplication",
            ErrorKind::ColumnType => "ColumnType",
            ErrorKind::UniqueKey => "UniqueKey",
            ErrorKind::Dmv => "Dmv",
            ErrorKind::MissingValue => "MissingValue",
            ErrorKind::NumericOutlier => "NumericOutlier",
            ErrorKind::StringOutlier => "StringOutlier",
            ErrorKind::MissingRecord => "MissingRecord",
        }
    }

    /// Key of the expectation in the model's answer and in the document.
    pub fn expectation_key(self) -> &'static str {
        match self {
            ErrorKind::Duplication => "ExpDuplicate",
            ErrorKind::ColumnType => "ExpType",
            ErrorKind::UniqueKey => "ExpUnique",
            ErrorKind::Dmv => "PotentialDMV",
            ErrorKind::MissingValue => "AllowMissing",
            ErrorKind::NumericOutlier => "ExpQuantile",
            ErrorKind::StringOutlier => "ExpStr",
            ErrorKind::MissingRecord => "ExpFreq",
        }
    }

    fn expectation_shape(self) -> &'static str {
        match self {
            ErrorKind::Duplication | ErrorKind::UniqueKey | ErrorKind::MissingValue => "a boolean",
            ErrorKind::ColumnType => "one of \"boolean\", \"integer\", \"float\", \"string\", \"date\", \"timestamp\"",
            ErrorKind::Dmv => "a list of values (possibly empty)",
            ErrorKind::NumericOutlier => "a list of 5 non-decreasing numbers [min, Q1, median, Q3, max]",
            ErrorKind::StringOutlier => "a non-empty list of example strings",
            ErrorKind::MissingRecord => "an object mapping each expected value to a relative weight",
        }
    }

    fn profile_task(self) -> &'static str {
        match self {
            ErrorKind::Duplication => {
                "Based on the meaning of the table, should exact duplicate rows be expected? Explain any expected duplication."
            }
            ErrorKind::ColumnType => "What primitive data type should this column have, given its meaning?",
            ErrorKind::UniqueKey => "Should every value of this column be unique, like an identifier?",
            ErrorKind::Dmv => {
                "List values that could be used as placeholders for missing data in this column, if any."
            }
            ErrorKind::MissingValue => "Is it acceptable for this column to have missing (NULL) values?",
            ErrorKind::NumericOutlier => "What quantiles (0th to 4th) would you expect for a reasonable column of this meaning?",
            ErrorKind::StringOutlier => "Give example strings showing what valid values of this column look like.",
            ErrorKind::MissingRecord => {
                "Which values would you expect in this column and with what relative frequencies?"
            }
        }
    }

    fn review_task(self) -> &'static str {
        match self {
            ErrorKind::Duplication => "The table contains duplicate rows. Are they an error given the expectation?",
            ErrorKind::ColumnType => "Is the current type acceptable, or should the column be cast to the expected type?",
            ErrorKind::UniqueKey => "The column is expected to be unique but is not. Do the repeated values indicate an error?",
            ErrorKind::Dmv => "Are any of the candidate values really disguised missing values that should be cleaned?",
            ErrorKind::MissingValue => "The column has missing values. Are they an error given the expectation?",
            ErrorKind::NumericOutlier => "Compare the observed and expected quantiles. Are there unusual values that indicate errors?",
            ErrorKind::StringOutlier => {
                "Compare the observed pattern, inliers and outliers with the expected examples. Are any values erroneous?"
            }
            ErrorKind::MissingRecord => {
                "Compare the observed and expected distributions. Do they suggest missing or extra records?"
            }
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown error kind \"{s}\""))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SemanticsError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{kind} does not apply to {target}")]
    KindNotApplicable { kind: ErrorKind, target: Target },
}

// ---------------------------------------------------------------------------
// Higher-order types

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HigherOrderType {
    ZipCode,
    FipsCode,
    CountryName,
    UsStateName,
    LatLong,
    Category,
    FreeText,
    None,
}

impl HigherOrderType {
    pub const NAMES: [&'static str; 8] = [
        "zip_code",
        "fips_code",
        "country_name",
        "us_state_name",
        "lat_long",
        "category",
        "free_text",
        "none",
    ];

    pub fn is_geographic(self) -> bool {
        matches!(
            self,
            HigherOrderType::ZipCode
                | HigherOrderType::FipsCode
                | HigherOrderType::CountryName
                | HigherOrderType::UsStateName
                | HigherOrderType::LatLong
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeAssignment {
    pub columns: Vec<String>,
    #[serde(rename = "type")]
    pub hot: HigherOrderType,
}

/// Higher-order types for every column of one leaf group. Coordinate pairs
/// are a single two-column assignment ordered `[latitude, longitude]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HigherOrderAssignment {
    #[serde(rename = "Assignments")]
    pub assignments: Vec<TypeAssignment>,
}

impl HigherOrderAssignment {
    pub fn type_of(&self, column: &str) -> Option<HigherOrderType> {
        self.assignments
            .iter()
            .find(|a| a.columns.iter().any(|c| c == column))
            .map(|a| a.hot)
    }

    /// Multi-column assignments, i.e. coordinate pairs.
    pub fn groups(&self) -> impl Iterator<Item = &TypeAssignment> {
        self.assignments.iter().filter(|a| a.columns.len() > 1)
    }
}

fn parse_assignment(raw: &str, group: &[String]) -> Result<HigherOrderAssignment, String> {
    let map = extract_fenced_json(raw).map_err(|e| e.to_string())?;
    let parsed: HigherOrderAssignment = serde_json::from_value(Json::Object(map)).map_err(|e| {
        format!(
            "expected {{\"Assignments\": [{{\"columns\": [...], \"type\": ...}}]}} with type one of {}: {e}",
            HigherOrderType::NAMES.join(", ")
        )
    })?;
    let mut seen = HashSet::new();
    for a in &parsed.assignments {
        if a.columns.is_empty() {
            return Err("every assignment needs at least one column".into());
        }
        for c in &a.columns {
            if !group.contains(c) {
                return Err(format!("column \"{c}\" is not in this group"));
            }
            if !seen.insert(c.as_str()) {
                return Err(format!("column \"{c}\" is assigned more than once"));
            }
        }
        match (a.hot, a.columns.len()) {
            (HigherOrderType::LatLong, 2) => {}
            (HigherOrderType::LatLong, n) => {
                return Err(format!("lat_long needs exactly 2 columns [latitude, longitude], got {n}"))
            }
            (_, 1) => {}
            (t, _) => {
                return Err(format!(
                    "only lat_long may span several columns, not {}",
                    serde_json::to_string(&t).expect("serializes")
                ))
            }
        }
    }
    Ok(parsed)
}

/// Fills in unassigned columns and checks category claims against the data.
fn settle_assignment(mut a: HigherOrderAssignment, group: &[String], t: &ColumnTable) -> HigherOrderAssignment {
    let fallback = |col: &str| {
        if t.ptype(col) == Some(PrimitiveType::String) {
            HigherOrderType::FreeText
        } else {
            HigherOrderType::None
        }
    };
    for entry in a.assignments.iter_mut() {
        if entry.hot == HigherOrderType::Category && !statprofile::is_categorical(t, &entry.columns[0]) {
            entry.hot = fallback(&entry.columns[0]);
        }
    }
    for c in group {
        if a.type_of(c).is_none() {
            a.assignments.push(TypeAssignment {
                columns: vec![c.clone()],
                hot: fallback(c),
            });
        }
    }
    let order: IndexMap<&str, usize> = group.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    a.assignments.sort_by_key(|x| order.get(x.columns[0].as_str()).copied());
    a
}

/// Asks the model which higher-order type each column of a leaf group has.
#[allow(clippy::too_many_arguments)]
pub fn classify_higher_order(
    call_id: &str,
    group: &[String],
    table_summary: &str,
    column_summaries: &IndexMap<String, String>,
    t: &ColumnTable,
    llm: &dyn ChatProvider,
    max_retries: usize,
) -> Result<HigherOrderAssignment, SemanticsError> {
    let idx: Vec<usize> = group.iter().filter_map(|c| t.column_index(c)).collect();
    let summaries: String = group
        .iter()
        .map(|c| format!("- {c}: {}\n", column_summaries.get(c).map_or("", String::as_str)))
        .collect();
    let user = format!(
        "CONTEXT\nTable summary: {table_summary}\nColumns:\n{summaries}\n\
         EVIDENCE\nFirst rows of these columns:\n{}\n\
         TASK\nAssign a higher-order type to the columns where one applies: zip code, FIPS code, \
         country name, US state name, latitude/longitude coordinates (a pair of columns, latitude first), \
         category (a small set of labels) or free text.",
        sample_csv(t, &idx, CLASSIFY_SAMPLE_ROWS)
    );
    let req = ChatRequest::new(call_id, SYSTEM, user).with_schema(format!(
        "Reply with a JSON object in a ```json fenced block: {{\"Assignments\": [{{\"columns\": [\"col\"], \"type\": \"category\"}}]}}. \
         Allowed types: {}.",
        HigherOrderType::NAMES.join(", ")
    ));
    let parsed = complete_validated(llm, &req, max_retries, |raw| parse_assignment(raw, group))?.parsed;
    Ok(settle_assignment(parsed, group, t))
}

// ---------------------------------------------------------------------------
// Applicability and evidence

/// Whether `kind` is profiled for `target`. Coordinate groups are profiled
/// as one column for uniqueness and missingness; their members keep the
/// remaining column-level kinds.
pub fn applicable(kind: ErrorKind, target: &Target, t: &ColumnTable) -> bool {
    match target {
        Target::Table => kind == ErrorKind::Duplication,
        Target::Group(cols) => {
            matches!(kind, ErrorKind::UniqueKey | ErrorKind::MissingValue)
                && cols.iter().all(|c| t.column_index(c).is_some())
        }
        Target::Column(c) => {
            let Some(ptype) = t.ptype(c) else {
                return false;
            };
            match kind {
                ErrorKind::Duplication => false,
                ErrorKind::ColumnType | ErrorKind::UniqueKey | ErrorKind::Dmv | ErrorKind::MissingValue => true,
                ErrorKind::NumericOutlier => matches!(ptype, PrimitiveType::Integer | PrimitiveType::Float),
                ErrorKind::StringOutlier => ptype == PrimitiveType::String,
                ErrorKind::MissingRecord => ptype == PrimitiveType::Boolean || statprofile::is_categorical(t, c),
            }
        }
    }
}

/// Runs the statistical measurement behind `kind`.
pub fn compute_evidence(kind: ErrorKind, target: &Target, t: &ColumnTable, theta: f64) -> Result<StatEvidence, StatError> {
    let column = || match target {
        Target::Column(c) => Ok(c.as_str()),
        other => Err(StatError::InvalidTarget(other.to_string())),
    };
    Ok(match kind {
        ErrorKind::Duplication => match target {
            Target::Table => StatEvidence::Duplication(statprofile::profile_duplicates(t)),
            other => return Err(StatError::InvalidTarget(other.to_string())),
        },
        ErrorKind::ColumnType => StatEvidence::ColumnType(statprofile::profile_column_type(t, column()?)?),
        ErrorKind::UniqueKey => StatEvidence::Uniqueness(statprofile::profile_uniqueness(t, target)?),
        ErrorKind::Dmv => {
            let c = column()?;
            let induced = if t.ptype(c) == Some(PrimitiveType::String) {
                Some(statprofile::profile_string(t, c, theta)?)
            } else {
                None
            };
            StatEvidence::Dmv(statprofile::detect_candidate_dmvs(t, c, induced.as_ref())?)
        }
        ErrorKind::MissingValue => StatEvidence::Missing(statprofile::profile_missing(t, target)?),
        ErrorKind::NumericOutlier => StatEvidence::Numeric(statprofile::compute_quantiles(t, column()?)?),
        ErrorKind::StringOutlier => StatEvidence::String(statprofile::profile_string(t, column()?, theta)?),
        ErrorKind::MissingRecord => StatEvidence::Frequency(statprofile::compute_value_frequency(
            t,
            column()?,
            statprofile::DEFAULT_FREQ_CAP,
        )?),
    })
}

// ---------------------------------------------------------------------------
// Semantic profile

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    ExpDuplicate(bool),
    ExpType(PrimitiveType),
    ExpUnique(bool),
    PotentialDmv(Vec<Json>),
    AllowMissing(bool),
    ExpQuantile([f64; 5]),
    ExpStr(Vec<String>),
    ExpFreq(IndexMap<String, f64>),
}

impl Expectation {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Expectation::ExpDuplicate(_) => ErrorKind::Duplication,
            Expectation::ExpType(_) => ErrorKind::ColumnType,
            Expectation::ExpUnique(_) => ErrorKind::UniqueKey,
            Expectation::PotentialDmv(_) => ErrorKind::Dmv,
            Expectation::AllowMissing(_) => ErrorKind::MissingValue,
            Expectation::ExpQuantile(_) => ErrorKind::NumericOutlier,
            Expectation::ExpStr(_) => ErrorKind::StringOutlier,
            Expectation::ExpFreq(_) => ErrorKind::MissingRecord,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Expectation::ExpDuplicate(b) | Expectation::ExpUnique(b) | Expectation::AllowMissing(b) => json!(b),
            Expectation::ExpType(t) => json!(t),
            Expectation::PotentialDmv(v) => json!(v),
            Expectation::ExpQuantile(q) => json!(q),
            Expectation::ExpStr(v) => json!(v),
            Expectation::ExpFreq(m) => json!(m),
        }
    }

    fn parse(kind: ErrorKind, v: &Json) -> Result<Self, String> {
        let key = kind.expectation_key();
        let bad = || format!("{key} must be {}", kind.expectation_shape());
        let boolean = || v.as_bool().ok_or_else(bad);
        Ok(match kind {
            ErrorKind::Duplication => Expectation::ExpDuplicate(boolean()?),
            ErrorKind::UniqueKey => Expectation::ExpUnique(boolean()?),
            ErrorKind::MissingValue => Expectation::AllowMissing(boolean()?),
            ErrorKind::ColumnType => {
                Expectation::ExpType(v.as_str().and_then(PrimitiveType::from_name).ok_or_else(bad)?)
            }
            ErrorKind::Dmv => Expectation::PotentialDmv(v.as_array().ok_or_else(bad)?.clone()),
            ErrorKind::NumericOutlier => {
                let xs: Vec<f64> = v
                    .as_array()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|x| x.as_f64().filter(|f| f.is_finite()))
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?;
                let q: [f64; 5] = xs.try_into().map_err(|_| bad())?;
                if q.windows(2).any(|w| w[0] > w[1]) {
                    return Err(format!("{key} must be non-decreasing"));
                }
                Expectation::ExpQuantile(q)
            }
            ErrorKind::StringOutlier => {
                let xs: Vec<String> = v
                    .as_array()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|x| x.as_str().map(str::to_string))
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?;
                if xs.is_empty() {
                    return Err(bad());
                }
                Expectation::ExpStr(xs)
            }
            ErrorKind::MissingRecord => {
                let m: IndexMap<String, f64> = v
                    .as_object()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|(k, w)| w.as_f64().filter(|f| f.is_finite() && *f >= 0.0).map(|f| (k.clone(), f)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| format!("{key} weights must be non-negative numbers"))?;
                if !m.values().any(|w| *w > 0.0) {
                    return Err(format!("{key} needs at least one positive weight"));
                }
                Expectation::ExpFreq(m)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemProfile {
    pub expectation: Expectation,
    pub thought: String,
}

impl SemProfile {
    pub fn kind(&self) -> ErrorKind {
        self.expectation.kind()
    }

    /// `{"<ExpKey>": ..., "Thought": "..."}`
    pub fn to_payload(&self) -> Json {
        let mut m = Map::new();
        m.insert(self.kind().expectation_key().into(), self.expectation.to_json());
        m.insert("Thought".into(), json!(self.thought));
        Json::Object(m)
    }

    pub fn from_payload(kind: ErrorKind, m: &Map<String, Json>) -> Result<Self, String> {
        let key = kind.expectation_key();
        let thought = match m.get("Thought") {
            Some(Json::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
            _ => return Err("Thought must be a non-empty string".into()),
        };
        let v = m.get(key).ok_or_else(|| format!("missing key {key}"))?;
        Ok(SemProfile {
            expectation: Expectation::parse(kind, v)?,
            thought,
        })
    }
}

/// Context shared by profile and review prompts.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub table_summary: &'a str,
    pub column_summaries: &'a IndexMap<String, String>,
}

impl PromptContext<'_> {
    fn render(&self, target: &Target) -> String {
        let mut out = format!("Table summary: {}\n", self.table_summary);
        for c in target.columns() {
            if let Some(s) = self.column_summaries.get(c) {
                out.push_str(&format!("Column {c}: {s}\n"));
            }
        }
        out
    }
}

fn target_phrase(target: &Target) -> String {
    match target {
        Target::Table => "the whole table".into(),
        Target::Column(c) => format!("column \"{c}\""),
        Target::Group(cs) => format!("columns {} taken together", cs.join(", ")),
    }
}

pub fn semantic_profile(
    call_id: &str,
    kind: ErrorKind,
    target: &Target,
    ctx: PromptContext<'_>,
    t: &ColumnTable,
    llm: &dyn ChatProvider,
    max_retries: usize,
) -> Result<SemProfile, SemanticsError> {
    if !applicable(kind, target, t) {
        return Err(SemanticsError::KindNotApplicable {
            kind,
            target: target.clone(),
        });
    }
    let user = format!(
        "CONTEXT\n{}\nTASK\nFor {}: {}",
        ctx.render(target),
        target_phrase(target),
        kind.profile_task()
    );
    let req = ChatRequest::new(call_id, SYSTEM, user).with_schema(format!(
        "Reply with a JSON object in a ```json fenced block with keys \"Thought\" (your reasoning, a non-empty string) \
         and \"{}\" ({}).",
        kind.expectation_key(),
        kind.expectation_shape()
    ));
    let resp = complete_validated(llm, &req, max_retries, |raw| {
        let map = extract_fenced_json(raw).map_err(|e| e.to_string())?;
        SemProfile::from_payload(kind, &map)
    })?;
    Ok(resp.parsed)
}

// ---------------------------------------------------------------------------
// Review

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Machine,
    Accepted,
    Overridden,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewVerdict {
    pub kind: ErrorKind,
    pub target: Target,
    pub is_error: bool,
    pub reasoning: String,
    pub status: VerdictStatus,
    pub note: Option<String>,
    /// Whether the model was consulted or the gate decided.
    pub gated: bool,
}

impl ReviewVerdict {
    pub fn to_payload(&self) -> Json {
        json!({
            "is_error": self.is_error,
            "reasoning": self.reasoning,
            "status": self.status,
            "note": self.note,
        })
    }
}

/// Whether the statistics show a discrepancy worth asking the model about.
pub fn review_gate(evidence: &StatEvidence, sem: &SemProfile) -> bool {
    match (evidence, &sem.expectation) {
        (StatEvidence::Duplication(d), _) => d.has_duplicate,
        (StatEvidence::Uniqueness(u), Expectation::ExpUnique(exp)) => *exp && u.unique_ratio != 1.0,
        (StatEvidence::Missing(m), _) => m.missing_fraction > 0.0,
        (StatEvidence::Dmv(d), _) => !d.candidate_dmv.is_empty(),
        (StatEvidence::ColumnType(ty), Expectation::ExpType(exp)) => ty.current_type != *exp,
        _ => true,
    }
}

fn aligned_table(rows: &[NamedRow], extra: Option<(&str, Vec<String>)>) -> String {
    let Some(first) = rows.first() else {
        return "(none)\n".into();
    };
    let mut header: Vec<String> = first.keys().cloned().collect();
    let mut body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.values().map(|v| if v.is_null() { "NULL".into() } else { v.to_string() }).collect())
        .collect();
    if let Some((name, values)) = extra {
        header.push(name.into());
        for (row, v) in body.iter_mut().zip(values) {
            row.push(v);
        }
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header);
    out.push_str(&format!(
        "|{}|\n",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    ));
    for r in &body {
        out.push_str(&line(r));
    }
    out
}

/// Evidence as prompt text: scalars inline, sampled rows as aligned tables.
pub fn render_evidence(evidence: &StatEvidence) -> String {
    match evidence {
        StatEvidence::Duplication(d) => {
            let rows: Vec<NamedRow> = d.sample_duplicate.iter().map(|g| g.row.clone()).collect();
            let counts = d.sample_duplicate.iter().map(|g| g.count.to_string()).collect();
            format!(
                "HasDuplicate: {}\nSampleDuplicate:\n{}",
                d.has_duplicate,
                aligned_table(&rows, Some(("count", counts)))
            )
        }
        StatEvidence::Missing(m) => format!(
            "MissingFraction: {} ({} of the rows are NULL)\nSampleMissing:\n{}",
            m.missing_fraction,
            m.null_count,
            aligned_table(&m.sample_missing, None)
        ),
        StatEvidence::Frequency(f) => {
            let total: usize = f.value_freq.values().sum();
            let mut out = String::from("ValueFreq (count, share):\n");
            for (v, n) in &f.value_freq {
                out.push_str(&format!("  {v}: {n} ({:.3})\n", *n as f64 / total.max(1) as f64));
            }
            out
        }
        other => {
            let payload = other.to_payload();
            let obj = payload.as_object().expect("payloads are objects");
            obj.iter()
                .map(|(k, v)| format!("{k}: {v}\n"))
                .collect()
        }
    }
}

fn render_expectation(sem: &SemProfile) -> String {
    match &sem.expectation {
        Expectation::ExpFreq(m) => {
            let total: f64 = m.values().sum();
            let mut out = String::from("ExpFreq (normalized share):\n");
            for (v, w) in m {
                out.push_str(&format!("  {v}: {:.3}\n", w / total));
            }
            out
        }
        e => format!("{}: {}\n", sem.kind().expectation_key(), e.to_json()),
    }
}

fn parse_review(raw: &str) -> Result<(bool, String), String> {
    let map = extract_fenced_json(raw).map_err(|e| e.to_string())?;
    let is_error = map
        .get("is_error")
        .and_then(Json::as_bool)
        .ok_or("is_error must be a boolean")?;
    match map.get("reasoning") {
        Some(Json::String(s)) if !s.trim().is_empty() => Ok((is_error, s.trim().to_string())),
        _ => Err("reasoning must be a non-empty string".into()),
    }
}

/// Reviews one error kind for one target. Gated cases return without a
/// model call.
#[allow(clippy::too_many_arguments)]
pub fn semantic_review(
    call_id: &str,
    target: &Target,
    evidence: &StatEvidence,
    sem: &SemProfile,
    ctx: PromptContext<'_>,
    llm: &dyn ChatProvider,
    max_retries: usize,
) -> Result<ReviewVerdict, SemanticsError> {
    let kind = sem.kind();
    let verdict = |is_error, reasoning: String, gated| ReviewVerdict {
        kind,
        target: target.clone(),
        is_error,
        reasoning,
        status: VerdictStatus::Machine,
        note: None,
        gated,
    };
    if !review_gate(evidence, sem) {
        return Ok(verdict(false, NO_DISCREPANCY.into(), true));
    }
    let user = format!(
        "CONTEXT\n{}Earlier reasoning about expectations: {}\n\nEVIDENCE\nObserved statistics for {}:\n{}\nExpectation:\n{}\nTASK\n{}",
        ctx.render(target),
        sem.thought,
        target_phrase(target),
        render_evidence(evidence),
        render_expectation(sem),
        kind.review_task()
    );
    let req = ChatRequest::new(call_id, SYSTEM, user).with_schema(
        "Reply with a JSON object in a ```json fenced block: {\"reasoning\": \"...\", \"is_error\": true or false}.",
    );
    let (is_error, reasoning) = complete_validated(llm, &req, max_retries, parse_review)?.parsed;
    Ok(verdict(is_error, reasoning, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_csv, CsvOptions};
    use crate::llm::{MockProvider, MockScript};
    use crate::statprofile::{MissingStats, UniquenessStats};

    fn fenced(v: Json) -> String {
        format!("Thinking.\n```json\n{v}\n```")
    }

    fn table() -> ColumnTable {
        parse_csv(
            "lat,lon,month,note,n\n1.5,2.5,Jan,hello there,1\n3.5,4.5,Feb,general remark,2\n",
            "t",
            CsvOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn expectation_shapes() {
        let ok = |kind: ErrorKind, v: Json| {
            let m = json!({"Thought": "t", kind.expectation_key(): v});
            SemProfile::from_payload(kind, m.as_object().unwrap())
        };
        assert!(ok(ErrorKind::NumericOutlier, json!([0, 20, 40, 60, 130])).is_ok());
        assert!(ok(ErrorKind::NumericOutlier, json!([0, 20, 10, 60, 130])).is_err());
        assert!(ok(ErrorKind::NumericOutlier, json!([0, 20, 40])).is_err());
        assert!(ok(ErrorKind::StringOutlier, json!([])).is_err());
        assert!(ok(ErrorKind::MissingRecord, json!({"a": 0})).is_err());
        assert!(ok(ErrorKind::MissingRecord, json!({"a": 1, "b": 0})).is_ok());
        assert_eq!(
            ok(ErrorKind::ColumnType, json!("int")).unwrap().expectation,
            Expectation::ExpType(PrimitiveType::Integer)
        );
        assert!(ok(ErrorKind::ColumnType, json!("decimalish")).is_err());
        assert!(ok(ErrorKind::MissingValue, json!("yes")).is_err());
        let no_thought = json!({"AllowMissing": true});
        assert!(SemProfile::from_payload(ErrorKind::MissingValue, no_thought.as_object().unwrap()).is_err());
    }

    #[test]
    fn profile_retries_on_bad_shape() {
        let mut script = MockScript::new();
        script.push("sem", fenced(json!({"Thought": "x", "AllowMissing": "maybe"})));
        script.push("sem", fenced(json!({"Thought": "Maiden names are often absent.", "AllowMissing": true})));
        let p = MockProvider::new(script);
        let summaries = IndexMap::new();
        let ctx = PromptContext {
            table_summary: "s",
            column_summaries: &summaries,
        };
        let sem = semantic_profile("sem", ErrorKind::MissingValue, &Target::column("note"), ctx, &table(), &p, 3).unwrap();
        assert_eq!(sem.expectation, Expectation::AllowMissing(true));
        assert_eq!(p.call_count(), 2);
    }

    #[test]
    fn inapplicable_kinds() {
        let t = table();
        assert!(!applicable(ErrorKind::NumericOutlier, &Target::column("note"), &t));
        assert!(!applicable(ErrorKind::StringOutlier, &Target::column("lat"), &t));
        assert!(!applicable(ErrorKind::Duplication, &Target::column("lat"), &t));
        assert!(applicable(ErrorKind::Duplication, &Target::Table, &t));
        let p = MockProvider::new(MockScript::new());
        let summaries = IndexMap::new();
        let ctx = PromptContext {
            table_summary: "s",
            column_summaries: &summaries,
        };
        assert!(matches!(
            semantic_profile("x", ErrorKind::NumericOutlier, &Target::column("note"), ctx, &t, &p, 3),
            Err(SemanticsError::KindNotApplicable { .. })
        ));
        assert_eq!(p.call_count(), 0);
    }

    #[test]
    fn gate_skips_model() {
        let p = MockProvider::new(MockScript::new());
        let summaries = IndexMap::new();
        let ctx = PromptContext {
            table_summary: "s",
            column_summaries: &summaries,
        };
        let evidence = StatEvidence::Uniqueness(UniquenessStats {
            unique_ratio: 1.0,
            sample_non_unique: vec![],
        });
        let sem = SemProfile {
            expectation: Expectation::ExpUnique(true),
            thought: "ids".into(),
        };
        let v = semantic_review("r", &Target::column("n"), &evidence, &sem, ctx, &p, 3).unwrap();
        assert!(!v.is_error && v.gated);
        assert_eq!(v.reasoning, NO_DISCREPANCY);
        assert_eq!(p.call_count(), 0);
    }

    #[test]
    fn review_asks_model_when_gate_opens() {
        let mut script = MockScript::new();
        script.push(
            "r",
            fenced(json!({"reasoning": "Maiden names are often missing; this is normal.", "is_error": false})),
        );
        let p = MockProvider::new(script);
        let summaries = IndexMap::new();
        let ctx = PromptContext {
            table_summary: "s",
            column_summaries: &summaries,
        };
        let evidence = StatEvidence::Missing(MissingStats {
            missing_fraction: 0.817,
            null_count: 817,
            sample_missing: vec![],
        });
        let sem = SemProfile {
            expectation: Expectation::AllowMissing(true),
            thought: "t".into(),
        };
        let v = semantic_review("r", &Target::column("Maiden"), &evidence, &sem, ctx, &p, 3).unwrap();
        assert!(!v.is_error && !v.gated);
        assert_eq!(p.call_count(), 1);
    }

    #[test]
    fn classification_defaults_and_checks() {
        let t = table();
        let group: Vec<String> = ["lat", "lon", "month", "note", "n"].iter().map(|s| s.to_string()).collect();
        let mut script = MockScript::new();
        script.push("c", fenced(json!({"Assignments": [{"columns": ["lat"], "type": "lat_long"}]})));
        script.push(
            "c",
            fenced(json!({"Assignments": [
                {"columns": ["lat", "lon"], "type": "lat_long"},
                {"columns": ["month"], "type": "category"}
            ]})),
        );
        let p = MockProvider::new(script);
        let a = classify_higher_order("c", &group, "s", &IndexMap::new(), &t, &p, 3).unwrap();
        assert_eq!(p.call_count(), 2);
        assert_eq!(a.type_of("lon"), Some(HigherOrderType::LatLong));
        // Two distinct months over two rows is not categorical.
        assert_eq!(a.type_of("month"), Some(HigherOrderType::FreeText));
        assert_eq!(a.type_of("note"), Some(HigherOrderType::FreeText));
        assert_eq!(a.type_of("n"), Some(HigherOrderType::None));
        assert_eq!(a.groups().count(), 1);
    }

    #[test]
    fn evidence_rendering_uses_tables() {
        let t = parse_csv("a,b\n1,x\n1,x\n", "t", CsvOptions::default()).unwrap();
        let e = compute_evidence(ErrorKind::Duplication, &Target::Table, &t, 0.9).unwrap();
        let text = render_evidence(&e);
        assert!(text.contains("| a | b | count |"));
        assert!(text.contains("| 1 | x | 2     |"));
    }
}
