//! Delimited-file ingestion into an immutable, typed, columnar table.
//!
//! Only the empty cell is treated as null. Sentinel strings such as `N/A`
//! or `-` survive ingestion as ordinary values so that the disguised
//! missing value detector can find them later.
//!
//! Column types are inferred per column. A column is promoted past
//! `string` only when every non-null cell parses as the candidate type,
//! tried in the order boolean, integer, float, date, timestamp.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Serialize, Serializer};

/// A full row of cell values, in schema order.
pub type Row = Vec<Value>;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {cause}")]
    Io { path: PathBuf, cause: io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("failed to write delimited output: {0}")]
    Write(#[from] csv::Error),
}

impl IngestError {
    fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        IngestError::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}

/// The closed set of primitive column types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveType {
    Boolean,
    Integer,
    Float,
    String,
    Date,
    Timestamp,
}

impl PrimitiveType {
    pub const ALL: [PrimitiveType; 6] = [
        PrimitiveType::Boolean,
        PrimitiveType::Integer,
        PrimitiveType::Float,
        PrimitiveType::String,
        PrimitiveType::Date,
        PrimitiveType::Timestamp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveType::Boolean => "boolean",
            PrimitiveType::Integer => "integer",
            PrimitiveType::Float => "float",
            PrimitiveType::String => "string",
            PrimitiveType::Date => "date",
            PrimitiveType::Timestamp => "timestamp",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, PrimitiveType::Integer | PrimitiveType::Float)
    }

    /// Parses a type name, accepting a few common aliases (`int`, `double`, ...).
    pub fn from_name(name: &str) -> Option<Self> {
        let lowered = name.trim().to_ascii_lowercase();
        let ty = match lowered.as_str() {
            "boolean" | "bool" => PrimitiveType::Boolean,
            "integer" | "int" | "bigint" | "int64" => PrimitiveType::Integer,
            "float" | "double" | "real" | "float64" | "decimal" => PrimitiveType::Float,
            "string" | "str" | "text" | "varchar" => PrimitiveType::String,
            "date" => PrimitiveType::Date,
            "timestamp" | "datetime" => PrimitiveType::Timestamp,
            _ => return None,
        };
        Some(ty)
    }
}

impl fmt::Display for PrimitiveType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single typed cell.
///
/// Equality, hashing and ordering are total so values can be grouped and
/// sorted; floats compare with `total_cmp` after folding `-0.0` into `0.0`.
/// `Null` equals only `Null`.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Boolean(bool),
    Integer(i64),
    Float(f64),
    String(String),
    Date(NaiveDate),
    Timestamp(NaiveDateTime),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn ptype(&self) -> Option<PrimitiveType> {
        Some(match self {
            Value::Null => return None,
            Value::Boolean(_) => PrimitiveType::Boolean,
            Value::Integer(_) => PrimitiveType::Integer,
            Value::Float(_) => PrimitiveType::Float,
            Value::String(_) => PrimitiveType::String,
            Value::Date(_) => PrimitiveType::Date,
            Value::Timestamp(_) => PrimitiveType::Timestamp,
        })
    }

    /// Numeric view used for quantiles and histograms. Dates map to days
    /// since the Unix epoch and timestamps to seconds since the epoch.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::Date(d) => Some((*d - epoch_date()).num_days() as f64),
            Value::Timestamp(ts) => {
                let delta = *ts - epoch_date().and_hms_opt(0, 0, 0).expect("valid midnight");
                Some(delta.num_milliseconds() as f64 / 1000.0)
            }
            _ => None,
        }
    }

    /// Parses `raw` as the given type; `None` when it does not fit.
    pub fn parse_as(raw: &str, ty: PrimitiveType) -> Option<Value> {
        match ty {
            PrimitiveType::Boolean => parse_bool(raw).map(Value::Boolean),
            PrimitiveType::Integer => raw.parse::<i64>().ok().map(Value::Integer),
            PrimitiveType::Float => parse_float(raw).map(Value::Float),
            PrimitiveType::String => Some(Value::String(raw.to_string())),
            PrimitiveType::Date => parse_date(raw).map(Value::Date),
            PrimitiveType::Timestamp => parse_timestamp(raw).map(Value::Timestamp),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Boolean(_) => 1,
            Value::Integer(_) => 2,
            Value::Float(_) => 3,
            Value::String(_) => 4,
            Value::Date(_) => 5,
            Value::Timestamp(_) => 6,
        }
    }
}

fn fold_zero(f: f64) -> f64 {
    if f == 0.0 {
        0.0
    } else {
        f
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Boolean(a), Value::Boolean(b)) => a.cmp(b),
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => fold_zero(*a).total_cmp(&fold_zero(*b)),
            (Value::String(a), Value::String(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Boolean(b) => b.hash(state),
            Value::Integer(i) => i.hash(state),
            Value::Float(f) => fold_zero(*f).to_bits().hash(state),
            Value::String(s) => s.hash(state),
            Value::Date(d) => d.hash(state),
            Value::Timestamp(ts) => ts.hash(state),
        }
    }
}

/// Canonical text form. Reloading the text yields the same value, so
/// floats always carry a decimal point or exponent.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Float(x) => f.write_str(&format_float(*x)),
            Value::String(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Value::Timestamp(ts) => write!(f, "{}", ts.format("%Y-%m-%dT%H:%M:%S%.f")),
        }
    }
}

/// Values serialize as plain JSON scalars; dates and timestamps as ISO strings.
impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => serializer.serialize_none(),
            Value::Boolean(b) => serializer.serialize_bool(*b),
            Value::Integer(i) => serializer.serialize_i64(*i),
            Value::Float(x) => serializer.serialize_f64(*x),
            other => serializer.serialize_str(&other.to_string()),
        }
    }
}

pub(crate) fn format_float(x: f64) -> String {
    let s = x.to_string();
    if s.contains(['.', 'e', 'E']) || !x.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

pub(crate) fn epoch_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

fn parse_bool(raw: &str) -> Option<bool> {
    if raw.eq_ignore_ascii_case("true") {
        Some(true)
    } else if raw.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

fn parse_float(raw: &str) -> Option<f64> {
    raw.parse::<f64>().ok().filter(|f| f.is_finite())
}

/// Strict `YYYY-MM-DD` shape check before handing off to chrono, which is
/// more lenient about digit counts.
fn has_iso_date_prefix(b: &[u8]) -> bool {
    b.len() >= 10
        && b[..4].iter().all(u8::is_ascii_digit)
        && b[4] == b'-'
        && b[5..7].iter().all(u8::is_ascii_digit)
        && b[7] == b'-'
        && b[8..10].iter().all(u8::is_ascii_digit)
}

pub(crate) fn parse_date(raw: &str) -> Option<NaiveDate> {
    if raw.len() != 10 || !has_iso_date_prefix(raw.as_bytes()) {
        return None;
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok()
}

/// ISO-8601 date-time with a `T` (or space) separator, optional seconds,
/// optional fraction and optional `Z` / numeric offset. Zoned values are
/// normalized to UTC.
pub(crate) fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let b = raw.as_bytes();
    if b.len() < 16
        || !has_iso_date_prefix(b)
        || !(b[10] == b'T' || b[10] == b't' || b[10] == b' ')
        || !(b[11].is_ascii_digit() && b[12].is_ascii_digit() && b[13] == b':')
        || !(b[14].is_ascii_digit() && b[15].is_ascii_digit())
    {
        return None;
    }
    let normalized: String = raw
        .char_indices()
        .map(|(i, c)| if i == 10 { 'T' } else { c })
        .collect();
    if normalized[11..].contains(['Z', 'z', '+', '-']) {
        // RFC 3339 requires seconds.
        let with_seconds = if normalized.as_bytes().get(16) == Some(&b':') {
            normalized.replace('z', "Z")
        } else {
            let (hm, zone) = normalized.split_at(16);
            format!("{hm}:00{}", zone.replace('z', "Z"))
        };
        return DateTime::parse_from_rfc3339(&with_seconds)
            .or_else(|_| DateTime::parse_from_str(&with_seconds, "%Y-%m-%dT%H:%M:%S%.f%z"))
            .ok()
            .map(|dt| dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(&normalized, fmt).ok())
}

/// Infers the most specific primitive type such that every value parses.
///
/// `raw` must exclude null (empty) cells. An empty slice yields `string`.
pub fn infer_primitive_type<S: AsRef<str>>(raw: &[S]) -> PrimitiveType {
    if raw.is_empty() {
        return PrimitiveType::String;
    }
    const ORDER: [PrimitiveType; 5] = [
        PrimitiveType::Boolean,
        PrimitiveType::Integer,
        PrimitiveType::Float,
        PrimitiveType::Date,
        PrimitiveType::Timestamp,
    ];
    ORDER
        .into_iter()
        .find(|ty| raw.iter().all(|v| Value::parse_as(v.as_ref(), *ty).is_some()))
        .unwrap_or(PrimitiveType::String)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnSchema {
    pub name: String,
    pub ordinal: usize,
    pub ptype: PrimitiveType,
}

/// Typed cell storage for one column. `None` is the null mask.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Boolean(Vec<Option<bool>>),
    Integer(Vec<Option<i64>>),
    Float(Vec<Option<f64>>),
    String(Vec<Option<String>>),
    Date(Vec<Option<NaiveDate>>),
    Timestamp(Vec<Option<NaiveDateTime>>),
}

macro_rules! each_variant {
    ($data:expr, $v:ident => $body:expr) => {
        match $data {
            ColumnData::Boolean($v) => $body,
            ColumnData::Integer($v) => $body,
            ColumnData::Float($v) => $body,
            ColumnData::String($v) => $body,
            ColumnData::Date($v) => $body,
            ColumnData::Timestamp($v) => $body,
        }
    };
}

impl ColumnData {
    /// Builds a column of type `ty` from raw cells, `None` meaning null.
    /// Fails with the offending row index if a cell does not parse.
    pub fn parse(ty: PrimitiveType, cells: &[Option<&str>]) -> Result<ColumnData, usize> {
        fn collect<T>(
            cells: &[Option<&str>],
            f: impl Fn(&str) -> Option<T>,
        ) -> Result<Vec<Option<T>>, usize> {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| match c {
                    None => Ok(None),
                    Some(raw) => f(raw).map(Some).ok_or(i),
                })
                .collect()
        }
        Ok(match ty {
            PrimitiveType::Boolean => ColumnData::Boolean(collect(cells, parse_bool)?),
            PrimitiveType::Integer => ColumnData::Integer(collect(cells, |s| s.parse().ok())?),
            PrimitiveType::Float => ColumnData::Float(collect(cells, parse_float)?),
            PrimitiveType::String => ColumnData::String(collect(cells, |s| Some(s.to_string()))?),
            PrimitiveType::Date => ColumnData::Date(collect(cells, parse_date)?),
            PrimitiveType::Timestamp => ColumnData::Timestamp(collect(cells, parse_timestamp)?),
        })
    }

    pub fn ptype(&self) -> PrimitiveType {
        match self {
            ColumnData::Boolean(_) => PrimitiveType::Boolean,
            ColumnData::Integer(_) => PrimitiveType::Integer,
            ColumnData::Float(_) => PrimitiveType::Float,
            ColumnData::String(_) => PrimitiveType::String,
            ColumnData::Date(_) => PrimitiveType::Date,
            ColumnData::Timestamp(_) => PrimitiveType::Timestamp,
        }
    }

    pub fn len(&self) -> usize {
        each_variant!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        each_variant!(self, v => v[row].is_none())
    }

    pub fn null_count(&self) -> usize {
        each_variant!(self, v => v.iter().filter(|c| c.is_none()).count())
    }

    pub fn get(&self, row: usize) -> Value {
        match self {
            ColumnData::Boolean(v) => v[row].map_or(Value::Null, Value::Boolean),
            ColumnData::Integer(v) => v[row].map_or(Value::Null, Value::Integer),
            ColumnData::Float(v) => v[row].map_or(Value::Null, Value::Float),
            ColumnData::String(v) => v[row].clone().map_or(Value::Null, Value::String),
            ColumnData::Date(v) => v[row].map_or(Value::Null, Value::Date),
            ColumnData::Timestamp(v) => v[row].map_or(Value::Null, Value::Timestamp),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = Value> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// An immutable in-memory table. All columns have exactly `row_count` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTable {
    name: String,
    schema: Vec<ColumnSchema>,
    columns: Vec<ColumnData>,
    row_count: usize,
}

impl ColumnTable {
    /// Assembles a table from already-typed columns.
    pub fn from_columns(
        name: impl Into<String>,
        columns: Vec<(String, ColumnData)>,
    ) -> Result<ColumnTable, IngestError> {
        let row_count = columns.first().map_or(0, |(_, c)| c.len());
        let mut seen = HashSet::new();
        let mut schema = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        for (ordinal, (col_name, col)) in columns.into_iter().enumerate() {
            if col_name.is_empty() {
                return Err(IngestError::InvalidTable(format!("column {ordinal} has an empty name")));
            }
            if !seen.insert(col_name.clone()) {
                return Err(IngestError::InvalidTable(format!("duplicate column name \"{col_name}\"")));
            }
            if col.len() != row_count {
                return Err(IngestError::InvalidTable(format!(
                    "column \"{col_name}\" has {} cells, expected {row_count}",
                    col.len()
                )));
            }
            schema.push(ColumnSchema {
                name: col_name,
                ordinal,
                ptype: col.ptype(),
            });
            data.push(col);
        }
        Ok(ColumnTable {
            name: name.into(),
            schema,
            columns: data,
            row_count,
        })
    }

    /// Builds a table from raw text cells with the same rules as [`load_csv`]:
    /// empty cells are null and each column's type is inferred.
    pub fn from_raw<S: AsRef<str>>(
        name: impl Into<String>,
        headers: &[S],
        records: &[Vec<S>],
    ) -> Result<ColumnTable, IngestError> {
        for (i, rec) in records.iter().enumerate() {
            if rec.len() != headers.len() {
                return Err(IngestError::parse(
                    i + 2,
                    rec.len().min(headers.len()) + 1,
                    format!("expected {} fields, found {}", headers.len(), rec.len()),
                ));
            }
        }
        let columns = headers
            .iter()
            .enumerate()
            .map(|(c, h)| {
                let cells: Vec<Option<&str>> = records
                    .iter()
                    .map(|r| Some(r[c].as_ref()).filter(|s| !s.is_empty()))
                    .collect();
                let non_null: Vec<&str> = cells.iter().flatten().copied().collect();
                let ty = infer_primitive_type(&non_null);
                let data = ColumnData::parse(ty, &cells).expect("inferred type parses every cell");
                (h.as_ref().to_string(), data)
            })
            .collect();
        ColumnTable::from_columns(name, columns)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_count(&self) -> usize {
        self.schema.len()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.schema.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn column_at(&self, index: usize) -> &ColumnData {
        &self.columns[index]
    }

    pub fn ptype(&self, name: &str) -> Option<PrimitiveType> {
        self.column_index(name).map(|i| self.schema[i].ptype)
    }

    pub fn value(&self, row: usize, col: usize) -> Value {
        self.columns[col].get(row)
    }

    pub fn row(&self, row: usize) -> Row {
        self.columns.iter().map(|c| c.get(row)).collect()
    }

    /// Projection of one row onto the given column indices.
    pub fn project_row(&self, row: usize, cols: &[usize]) -> Row {
        cols.iter().map(|&c| self.columns[c].get(row)).collect()
    }
}

/// Options for reading and writing delimited text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
        }
    }
}

impl CsvOptions {
    pub fn tsv() -> Self {
        CsvOptions {
            delimiter: b'\t',
            ..Default::default()
        }
    }
}

/// Loads a delimited file into a [`ColumnTable`].
pub fn load_csv(
    path: impl AsRef<Path>,
    table_name: &str,
    options: CsvOptions,
) -> Result<ColumnTable, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|cause| IngestError::Io {
        path: path.to_path_buf(),
        cause,
    })?;
    parse_csv(&text, table_name, options)
}

/// Parses delimited text already in memory. See [`load_csv`].
pub fn parse_csv(text: &str, table_name: &str, options: CsvOptions) -> Result<ColumnTable, IngestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut records = split_records(text, options.delimiter as char)?;
    if records.is_empty() {
        return Err(IngestError::parse(1, 1, "input contains no records"));
    }
    let width = records[0].fields.len();
    for rec in &records {
        if rec.fields.len() != width {
            return Err(IngestError::parse(
                rec.line,
                rec.fields.len().min(width) + 1,
                format!("expected {width} fields, found {}", rec.fields.len()),
            ));
        }
    }
    let headers: Vec<String> = if options.has_header {
        let header = records.remove(0);
        let mut seen = HashSet::new();
        for (i, name) in header.fields.iter().enumerate() {
            if name.is_empty() {
                return Err(IngestError::parse(header.line, i + 1, "empty column name"));
            }
            if !seen.insert(name.as_str()) {
                return Err(IngestError::parse(
                    header.line,
                    i + 1,
                    format!("duplicate column name \"{name}\""),
                ));
            }
        }
        header.fields
    } else {
        (1..=width).map(|i| format!("col_{i}")).collect()
    };
    let rows: Vec<Vec<String>> = records.into_iter().map(|r| r.fields).collect();
    ColumnTable::from_raw(table_name, &headers, &rows)
}

struct RawRecord {
    line: usize,
    fields: Vec<String>,
}

/// Strict RFC-4180 splitter. Quotes may only open a field and must be
/// followed by a delimiter, a line break, or end of input once closed.
fn split_records(text: &str, delim: char) -> Result<Vec<RawRecord>, IngestError> {
    let mut records = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    let mut record_line = 1;
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut at_field_start = true;

    loop {
        let Some(c) = chars.next() else {
            if !(fields.is_empty() && field.is_empty() && at_field_start) {
                fields.push(std::mem::take(&mut field));
                records.push(RawRecord {
                    line: record_line,
                    fields: std::mem::take(&mut fields),
                });
            }
            break;
        };
        if at_field_start && c == '"' {
            at_field_start = false;
            let open_line = line;
            loop {
                match chars.next() {
                    None => {
                        return Err(IngestError::parse(
                            open_line,
                            fields.len() + 1,
                            "unterminated quoted field",
                        ))
                    }
                    Some('"') if chars.peek() == Some(&'"') => {
                        chars.next();
                        field.push('"');
                    }
                    Some('"') => break,
                    Some(ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        field.push(ch);
                    }
                }
            }
            match chars.peek() {
                None | Some('\n') | Some('\r') => {}
                Some(&ch) if ch == delim => {}
                Some(_) => {
                    return Err(IngestError::parse(
                        line,
                        fields.len() + 1,
                        "unexpected character after closing quote",
                    ))
                }
            }
            continue;
        }
        if c == delim {
            fields.push(std::mem::take(&mut field));
            at_field_start = true;
        } else if c == '\n' || c == '\r' {
            if c == '\r' && chars.peek() == Some(&'\n') {
                chars.next();
            }
            fields.push(std::mem::take(&mut field));
            records.push(RawRecord {
                line: record_line,
                fields: std::mem::take(&mut fields),
            });
            line += 1;
            record_line = line;
            at_field_start = true;
        } else if c == '"' {
            return Err(IngestError::parse(
                line,
                fields.len() + 1,
                "quote character inside an unquoted field",
            ));
        } else {
            field.push(c);
            at_field_start = false;
        }
    }
    Ok(records)
}

/// Writes the table as delimited text that [`parse_csv`] reads back into an
/// identical table. Nulls become empty cells.
pub fn write_csv<W: io::Write>(table: &ColumnTable, out: W, options: CsvOptions) -> Result<(), IngestError> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(options.delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    if options.has_header {
        writer.write_record(table.column_names())?;
    }
    for r in 0..table.row_count() {
        writer.write_record(table.row(r).iter().map(|v| v.to_string()))?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// First `min(n, row_count)` rows in file order.
pub fn sample_rows(table: &ColumnTable, n: usize) -> Vec<Row> {
    (0..n.min(table.row_count())).map(|r| table.row(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> ColumnTable {
        parse_csv(text, "t", CsvOptions::default()).unwrap()
    }

    #[test]
    fn empty_cell_is_null() {
        let t = load("id,age\n1,20\n2,30\n3,\n");
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.ptype("age"), Some(PrimitiveType::Integer));
        assert_eq!(t.column("age").unwrap().null_count(), 1);
        assert_eq!(t.value(2, 1), Value::Null);
    }

    #[test]
    fn duplicate_header_is_rejected() {
        let err = parse_csv("a,a\n1,2\n", "t", CsvOptions::default()).unwrap_err();
        match err {
            IngestError::Parse { line, column, message } => {
                assert_eq!((line, column), (1, 2));
                assert!(message.contains("\"a\""), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_row_reports_location() {
        let err = parse_csv("a,b\n1,2\n3\n", "t", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 3, column: 2, .. }), "{err:?}");
    }

    #[test]
    fn bad_quoting_is_rejected() {
        let err = parse_csv("a,b\n\"x\"y,2\n", "t", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, column: 1, .. }), "{err:?}");
        let err = parse_csv("a,b\nx\"y,2\n", "t", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }), "{err:?}");
        let err = parse_csv("a,b\n\"open,2\n", "t", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn quoted_fields_keep_delimiters_and_newlines() {
        let t = load("a,b\n\"x, \"\"y\"\"\",\"line\nbreak\"\n");
        assert_eq!(t.value(0, 0), Value::String("x, \"y\"".into()));
        assert_eq!(t.value(0, 1), Value::String("line\nbreak".into()));
    }

    #[test]
    fn sentinels_stay_values() {
        let t = load("v\nN/A\n-\n\n7\n");
        assert_eq!(t.ptype("v"), Some(PrimitiveType::String));
        assert_eq!(t.column("v").unwrap().null_count(), 1);
    }

    #[test]
    fn headerless_and_tsv() {
        let t = parse_csv("1\tx\n2\ty\n", "t", CsvOptions { delimiter: b'\t', has_header: false }).unwrap();
        assert_eq!(t.column_names(), vec!["col_1", "col_2"]);
        assert_eq!(t.row_count(), 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/file.csv", "t", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    #[test]
    fn infer_examples() {
        assert_eq!(infer_primitive_type(&["true", "false", "true"]), PrimitiveType::Boolean);
        assert_eq!(infer_primitive_type(&["20240412", "19991231"]), PrimitiveType::Integer);
        assert_eq!(infer_primitive_type(&["1.5", "2", "-3.25"]), PrimitiveType::Float);
        assert_eq!(infer_primitive_type(&["2024-04-12", "1999-12-31"]), PrimitiveType::Date);
        assert_eq!(
            infer_primitive_type(&["2024-04-12T10:00:00", "1970-01-01T00:00:00Z"]),
            PrimitiveType::Timestamp
        );
        assert_eq!(infer_primitive_type(&["2024-04-12", "2024-04-12T10:00:00"]), PrimitiveType::String);
        assert_eq!(infer_primitive_type(&["2024-4-12"]), PrimitiveType::String);
        assert_eq!(infer_primitive_type(&["NaN", "1.0"]), PrimitiveType::String);
        assert_eq!(infer_primitive_type::<&str>(&[]), PrimitiveType::String);
    }

    #[test]
    fn timestamps_normalize_to_utc() {
        let a = parse_timestamp("1970-01-01T00:00:00Z").unwrap();
        let b = parse_timestamp("1970-01-01T01:00:00+01:00").unwrap();
        let c = parse_timestamp("1970-01-01 00:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(Value::Timestamp(a).as_f64(), Some(0.0));
    }

    #[test]
    fn float_display_reparses_as_float() {
        assert_eq!(Value::Float(2.0).to_string(), "2.0");
        assert_eq!(Value::Float(-0.5).to_string(), "-0.5");
        assert_eq!(Value::Float(1e21).to_string().parse::<f64>().unwrap(), 1e21);
    }

    #[test]
    fn sample_rows_bounds() {
        let t = load("a\n1\n2\n3\n");
        assert_eq!(sample_rows(&t, 5).len(), 3);
        assert_eq!(sample_rows(&t, 2), vec![vec![Value::Integer(1)], vec![Value::Integer(2)]]);
        assert!(sample_rows(&t, 0).is_empty());
    }

    #[test]
    fn null_equals_only_null() {
        assert_eq!(Value::Null, Value::Null);
        assert_ne!(Value::Null, Value::String(String::new()));
        assert_eq!(Value::Float(0.0), Value::Float(-0.0));
    }
}
