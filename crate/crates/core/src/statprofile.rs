//! Statistical measurements over a loaded table.
//!
//! Every function here is a pure function of an immutable [`ColumnTable`].
//! Samples are deterministic: file order, or descending count with the first
//! occurrence winning ties.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Serialize, Serializer};
use serde_json::json;

use crate::ingest::{epoch_date, ColumnTable, PrimitiveType, Value};

pub const SAMPLE_LIMIT: usize = 5;
pub const TYPE_SAMPLE_LIMIT: usize = 10;
pub const DEFAULT_COVERAGE: f64 = 0.9;
pub const DEFAULT_FREQ_CAP: usize = 50;
/// Bucket that absorbs values beyond the frequency cap.
pub const OTHER_BUCKET: &str = "⟨other⟩";

const SENTINELS: [&str; 14] = [
    "-",
    "--",
    "n/a",
    "na",
    "none",
    "null",
    "?",
    "#value!",
    "unknown",
    "missing",
    "9999",
    "-1",
    "1970-01-01",
    "1970-01-01t00:00:00z",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatError {
    #[error("unknown column \"{0}\"")]
    UnknownColumn(String),
    #[error("column {0} has no non-null values")]
    EmptyColumn(String),
    #[error("column \"{column}\" is {ptype}, not numeric")]
    NotNumeric { column: String, ptype: PrimitiveType },
    #[error("column \"{column}\" is {ptype}, not categorical")]
    NotCategorical { column: String, ptype: PrimitiveType },
    #[error("measurement needs a column or column group, got {0}")]
    InvalidTarget(String),
}

/// What a measurement is about: the whole table, one column, or a group of
/// columns treated as a single tuple-valued column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Table,
    Column(String),
    Group(Vec<String>),
}

impl Target {
    pub fn column(name: impl Into<String>) -> Self {
        Target::Column(name.into())
    }

    pub fn columns(&self) -> Vec<&str> {
        match self {
            Target::Table => Vec::new(),
            Target::Column(c) => vec![c.as_str()],
            Target::Group(cs) => cs.iter().map(String::as_str).collect(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Table => f.write_str("*"),
            Target::Column(c) => f.write_str(c),
            Target::Group(cs) => write!(f, "[{}]", cs.join(", ")),
        }
    }
}

impl FromStr for Target {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "*" {
            Target::Table
        } else if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            Target::Group(inner.split(", ").map(str::to_string).collect())
        } else {
            Target::Column(s.to_string())
        })
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A cell of a column target, or the tuple of a group target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Single(Value),
    Tuple(Vec<Value>),
}

/// A full row keyed by column name.
pub type NamedRow = IndexMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateGroup {
    pub row: NamedRow,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicationStats {
    pub has_duplicate: bool,
    pub sample_duplicate: Vec<DuplicateGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeStats {
    pub current_type: PrimitiveType,
    pub sample_value: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessStats {
    pub unique_ratio: f64,
    pub sample_non_unique: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DmvRule {
    /// Matches a well-known placeholder token.
    Sentinel,
    /// Recurring value that breaks the column's prevalent pattern.
    Syntactic,
    /// Over-represented minimum or maximum.
    Extreme,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmvCandidate {
    pub value: Value,
    pub frequency: usize,
    pub rules: Vec<DmvRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmvStats {
    pub candidate_dmv: Vec<DmvCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingStats {
    pub missing_fraction: f64,
    pub null_count: usize,
    pub sample_missing: Vec<NamedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericStats {
    pub quantile: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StringStats {
    pub regex_pattern: Option<String>,
    pub sample_outlier: Vec<String>,
    pub sample_inlier: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyStats {
    pub value_freq: IndexMap<String, usize>,
}

/// Evidence produced by one statistical step.
#[derive(Debug, Clone, PartialEq)]
pub enum StatEvidence {
    Duplication(DuplicationStats),
    ColumnType(TypeStats),
    Uniqueness(UniquenessStats),
    Dmv(DmvStats),
    Missing(MissingStats),
    Numeric(NumericStats),
    String(StringStats),
    Frequency(FrequencyStats),
}

impl StatEvidence {
    /// Document form with the profile's field names.
    pub fn to_payload(&self) -> serde_json::Value {
        match self {
            StatEvidence::Duplication(d) => json!({
                "HasDuplicate": d.has_duplicate,
                "SampleDuplicate": d.sample_duplicate,
            }),
            StatEvidence::ColumnType(t) => json!({
                "CurrentType": t.current_type,
                "SampleValue": t.sample_value,
            }),
            StatEvidence::Uniqueness(u) => json!({
                "UniqueRatio": u.unique_ratio,
                "SampleNonUnique": u.sample_non_unique,
            }),
            StatEvidence::Dmv(d) => json!({ "CandidateDMV": d.candidate_dmv }),
            StatEvidence::Missing(m) => json!({
                "MissingFraction": m.missing_fraction,
                "SampleMissing": m.sample_missing,
            }),
            StatEvidence::Numeric(n) => json!({ "Quantile": n.quantile }),
            StatEvidence::String(s) => json!({
                "RegexPattern": s.regex_pattern,
                "SampleOutlier": s.sample_outlier,
                "SampleInlier": s.sample_inlier,
            }),
            StatEvidence::Frequency(f) => json!({ "ValueFreq": f.value_freq }),
        }
    }
}

fn col_index(t: &ColumnTable, col: &str) -> Result<usize, StatError> {
    t.column_index(col).ok_or_else(|| StatError::UnknownColumn(col.to_string()))
}

fn named_row(t: &ColumnTable, row: usize) -> NamedRow {
    t.schema()
        .iter()
        .map(|s| (s.name.clone(), t.value(row, s.ordinal)))
        .collect()
}

/// Per-row cells of a column or group target; `None` is null (for a group,
/// any member null).
pub fn target_cells(t: &ColumnTable, target: &Target) -> Result<Vec<Option<Cell>>, StatError> {
    match target {
        Target::Table => Err(StatError::InvalidTarget(target.to_string())),
        Target::Column(c) => {
            let data = t.column_at(col_index(t, c)?);
            Ok(data.values().map(|v| (!v.is_null()).then_some(Cell::Single(v))).collect())
        }
        Target::Group(cols) => {
            let idx: Vec<usize> = cols.iter().map(|c| col_index(t, c)).collect::<Result<_, _>>()?;
            Ok((0..t.row_count())
                .map(|r| {
                    let tuple = t.project_row(r, &idx);
                    (!tuple.iter().any(Value::is_null)).then_some(Cell::Tuple(tuple))
                })
                .collect())
        }
    }
}

/// Counts keyed in first-occurrence order.
fn count<K: std::hash::Hash + Eq>(items: impl IntoIterator<Item = K>) -> IndexMap<K, usize> {
    let mut counts = IndexMap::new();
    for k in items {
        *counts.entry(k).or_insert(0) += 1;
    }
    counts
}

/// Entries sorted by descending count; the stable sort keeps first
/// occurrence ahead on ties.
fn by_count_desc<K>(counts: IndexMap<K, usize>) -> Vec<(K, usize)> {
    let mut v: Vec<(K, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1));
    v
}

pub fn profile_duplicates(t: &ColumnTable) -> DuplicationStats {
    let mut first_row = IndexMap::new();
    let counts = count((0..t.row_count()).map(|r| {
        let row = t.row(r);
        first_row.entry(row.clone()).or_insert(r);
        row
    }));
    let sample_duplicate: Vec<DuplicateGroup> = by_count_desc(counts)
        .into_iter()
        .take_while(|(_, n)| *n >= 2)
        .take(SAMPLE_LIMIT)
        .map(|(row, count)| DuplicateGroup {
            row: named_row(t, first_row[&row]),
            count,
        })
        .collect();
    DuplicationStats {
        has_duplicate: !sample_duplicate.is_empty(),
        sample_duplicate,
    }
}

pub fn profile_column_type(t: &ColumnTable, col: &str) -> Result<TypeStats, StatError> {
    let data = t.column_at(col_index(t, col)?);
    let mut seen = HashSet::new();
    let sample_value = data
        .values()
        .filter(|v| !v.is_null() && seen.insert(v.clone()))
        .take(TYPE_SAMPLE_LIMIT)
        .collect();
    Ok(TypeStats {
        current_type: data.ptype(),
        sample_value,
    })
}

/// Distinct non-null values over non-null rows.
pub fn profile_uniqueness(t: &ColumnTable, target: &Target) -> Result<UniquenessStats, StatError> {
    let cells = target_cells(t, target)?;
    let counts = count(cells.into_iter().flatten());
    let non_null: usize = counts.values().sum();
    if non_null == 0 {
        return Err(StatError::EmptyColumn(target.to_string()));
    }
    let unique_ratio = counts.len() as f64 / non_null as f64;
    let sample_non_unique = by_count_desc(counts)
        .into_iter()
        .take_while(|(_, n)| *n >= 2)
        .take(SAMPLE_LIMIT)
        .map(|(c, _)| c)
        .collect();
    Ok(UniquenessStats {
        unique_ratio,
        sample_non_unique,
    })
}

pub fn profile_missing(t: &ColumnTable, target: &Target) -> Result<MissingStats, StatError> {
    let cells = target_cells(t, target)?;
    let null_rows: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_none())
        .map(|(r, _)| r)
        .collect();
    let missing_fraction = if t.row_count() == 0 {
        0.0
    } else {
        null_rows.len() as f64 / t.row_count() as f64
    };
    Ok(MissingStats {
        missing_fraction,
        null_count: null_rows.len(),
        sample_missing: null_rows.iter().take(SAMPLE_LIMIT).map(|&r| named_row(t, r)).collect(),
    })
}

/// Linear interpolation at rank `(n-1)p` over a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_quantiles(t: &ColumnTable, col: &str) -> Result<NumericStats, StatError> {
    let data = t.column_at(col_index(t, col)?);
    if !matches!(data.ptype(), PrimitiveType::Integer | PrimitiveType::Float) {
        return Err(StatError::NotNumeric {
            column: col.to_string(),
            ptype: data.ptype(),
        });
    }
    let mut xs: Vec<f64> = data.values().filter_map(|v| v.as_f64()).collect();
    if xs.is_empty() {
        return Err(StatError::EmptyColumn(col.to_string()));
    }
    xs.sort_by(f64::total_cmp);
    let quantile = [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| quantile_sorted(&xs, p));
    Ok(NumericStats { quantile })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum TokKind {
    Digit,
    Alpha,
    Space,
    Symbol(char),
}

fn tokenize(s: &str) -> Vec<(TokKind, &str)> {
    let kind_of = |c: char| {
        if c.is_ascii_digit() {
            TokKind::Digit
        } else if c.is_alphabetic() {
            TokKind::Alpha
        } else if c.is_whitespace() {
            TokKind::Space
        } else {
            TokKind::Symbol(c)
        }
    };
    let mut out: Vec<(TokKind, &str)> = Vec::new();
    let mut start = 0;
    let mut current: Option<TokKind> = None;
    for (i, c) in s.char_indices() {
        let k = kind_of(c);
        match current {
            Some(prev) if prev == k && !matches!(k, TokKind::Symbol(_)) => {}
            Some(prev) => {
                out.push((prev, &s[start..i]));
                start = i;
                current = Some(k);
            }
            None => current = Some(k),
        }
    }
    if let Some(k) = current {
        out.push((k, &s[start..]));
    }
    out
}

/// Escapes only characters that are special outside a character class, so
/// literals such as `-` stay readable.
fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if "\\.+*?()|[]{}^$#&~".contains(c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn slot_pattern(kind: TokKind, texts: &[&str]) -> String {
    if texts.iter().all(|t| *t == texts[0]) {
        return escape_literal(texts[0]);
    }
    let class = match kind {
        TokKind::Digit => r"\d",
        TokKind::Alpha if texts.iter().all(|t| t.is_ascii()) => "[A-Za-z]",
        TokKind::Alpha => r"\p{Alphabetic}",
        TokKind::Space => r"\s",
        TokKind::Symbol(_) => unreachable!("symbol slots always share their text"),
    };
    let lens = texts.iter().map(|t| t.chars().count());
    let (min, max) = lens.fold((usize::MAX, 0), |(lo, hi), n| (lo.min(n), hi.max(n)));
    if min == max {
        format!("{class}{{{min}}}")
    } else {
        format!("{class}{{{min},{max}}}")
    }
}

/// Anchored form of an induced pattern.
pub fn compile_anchored(pattern: &str) -> Regex {
    Regex::new(&format!("^(?:{pattern})$")).expect("induced patterns are valid")
}

/// Finds the prevalent shape of `values`. The pattern is reported only when
/// the most common token signature covers at least `theta` of the values.
pub fn induce_regex_pattern<S: AsRef<str>>(values: &[S], theta: f64) -> StringStats {
    assert!(theta > 0.5 && theta <= 1.0, "coverage threshold must be in (0.5, 1]");
    let absent = StringStats {
        regex_pattern: None,
        sample_outlier: Vec::new(),
        sample_inlier: Vec::new(),
    };
    if values.is_empty() {
        return absent;
    }
    let tokens: Vec<Vec<(TokKind, &str)>> = values.iter().map(|v| tokenize(v.as_ref())).collect();
    let signatures = count(tokens.iter().map(|ts| ts.iter().map(|t| t.0).collect::<Vec<_>>()));
    let (modal, covered) = signatures
        .into_iter()
        .fold(None, |best: Option<(Vec<TokKind>, usize)>, (sig, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((sig, n)),
        })
        .expect("non-empty input");
    if (covered as f64) < theta * values.len() as f64 {
        return absent;
    }
    let members: Vec<&Vec<(TokKind, &str)>> = tokens
        .iter()
        .filter(|ts| ts.len() == modal.len() && ts.iter().zip(&modal).all(|(t, k)| t.0 == *k))
        .collect();
    let pattern: String = modal
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let texts: Vec<&str> = members.iter().map(|ts| ts[i].1).collect();
            slot_pattern(*kind, &texts)
        })
        .collect();

    let re = compile_anchored(&pattern);
    let mut sample_inlier = Vec::new();
    let mut sample_outlier = Vec::new();
    let mut seen = HashSet::new();
    for v in values.iter().map(AsRef::as_ref) {
        if !seen.insert(v) {
            continue;
        }
        let bucket = if re.is_match(v) {
            &mut sample_inlier
        } else {
            &mut sample_outlier
        };
        if bucket.len() < SAMPLE_LIMIT {
            bucket.push(v.to_string());
        }
        if sample_inlier.len() == SAMPLE_LIMIT && sample_outlier.len() == SAMPLE_LIMIT {
            break;
        }
    }
    StringStats {
        regex_pattern: Some(pattern),
        sample_outlier,
        sample_inlier,
    }
}

/// Regex induction over a string column's non-null values.
pub fn profile_string(t: &ColumnTable, col: &str, theta: f64) -> Result<StringStats, StatError> {
    let data = t.column_at(col_index(t, col)?);
    let values: Vec<String> = data
        .values()
        .filter_map(|v| match v {
            Value::String(s) => Some(s),
            _ => None,
        })
        .collect();
    Ok(induce_regex_pattern(&values, theta))
}

fn is_sentinel(v: &Value) -> bool {
    let epoch = epoch_date();
    match v {
        Value::Date(d) => *d == epoch,
        Value::Timestamp(ts) => *ts == epoch.and_hms_opt(0, 0, 0).expect("valid midnight"),
        Value::Integer(n) => *n == -1 || *n == 9999,
        Value::Float(x) => *x == -1.0 || *x == 9999.0,
        Value::String(s) => SENTINELS.contains(&s.trim().to_lowercase().as_str()),
        Value::Boolean(_) | Value::Null => false,
    }
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Candidate disguised missing values from three rules: placeholder tokens,
/// recurring violations of the induced pattern, and spiking extremes.
pub fn detect_candidate_dmvs(
    t: &ColumnTable,
    col: &str,
    induced: Option<&StringStats>,
) -> Result<DmvStats, StatError> {
    let data = t.column_at(col_index(t, col)?);
    let counts = count(data.values().filter(|v| !v.is_null()));
    let mut rules: IndexMap<&Value, Vec<DmvRule>> = IndexMap::new();

    for v in counts.keys().filter(|v| is_sentinel(v)) {
        rules.entry(v).or_default().push(DmvRule::Sentinel);
    }

    if let Some(pattern) = induced.and_then(|s| s.regex_pattern.as_deref()) {
        let re = compile_anchored(pattern);
        let floor = (0.01 * t.row_count() as f64).max(2.0);
        for (v, &n) in &counts {
            if let Value::String(s) = v {
                if n as f64 >= floor && !re.is_match(s) {
                    rules.entry(v).or_default().push(DmvRule::Syntactic);
                }
            }
        }
    }

    let ordered = matches!(
        data.ptype(),
        PrimitiveType::Integer | PrimitiveType::Float | PrimitiveType::Date | PrimitiveType::Timestamp
    );
    if ordered && !counts.is_empty() {
        let mut freqs: Vec<usize> = counts.values().copied().collect();
        freqs.sort_unstable();
        let spike = 5.0 * median(&freqs);
        let min = counts.keys().min().expect("non-empty");
        let max = counts.keys().max().expect("non-empty");
        for v in [min, max] {
            let entry = rules.entry(v).or_default();
            if counts[v] as f64 > spike && !entry.contains(&DmvRule::Extreme) {
                entry.push(DmvRule::Extreme);
            }
        }
    }

    let mut candidate_dmv: Vec<DmvCandidate> = rules
        .into_iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(v, rules)| DmvCandidate {
            value: v.clone(),
            frequency: counts[v],
            rules,
        })
        .collect();
    candidate_dmv.sort_by_key(|c| (std::cmp::Reverse(c.frequency), counts.get_index_of(&c.value)));
    Ok(DmvStats { candidate_dmv })
}

/// Whether a string or integer column looks like a small set of categories.
pub fn is_categorical(t: &ColumnTable, col: &str) -> bool {
    let Some(data) = t.column(col) else {
        return false;
    };
    if !matches!(data.ptype(), PrimitiveType::String | PrimitiveType::Integer) {
        return false;
    }
    let non_null = data.len() - data.null_count();
    if non_null == 0 {
        return false;
    }
    let distinct = data.values().filter(|v| !v.is_null()).collect::<HashSet<_>>().len();
    distinct <= 100 && distinct as f64 / non_null as f64 <= 0.2
}

pub fn compute_value_frequency(t: &ColumnTable, col: &str, cap: usize) -> Result<FrequencyStats, StatError> {
    let data = t.column_at(col_index(t, col)?);
    if !matches!(
        data.ptype(),
        PrimitiveType::String | PrimitiveType::Integer | PrimitiveType::Boolean
    ) {
        return Err(StatError::NotCategorical {
            column: col.to_string(),
            ptype: data.ptype(),
        });
    }
    let sorted = by_count_desc(count(data.values().filter(|v| !v.is_null())));
    let mut value_freq: IndexMap<String, usize> = IndexMap::new();
    let mut other = 0;
    for (i, (v, n)) in sorted.into_iter().enumerate() {
        if i < cap {
            value_freq.insert(v.to_string(), n);
        } else {
            other += n;
        }
    }
    if other > 0 {
        *value_freq.entry(OTHER_BUCKET.to_string()).or_insert(0) += other;
    }
    Ok(FrequencyStats { value_freq })
}
