//! A small read-only query language for spot-checking rows.
//!
//! ```text
//! SELECT <* | col [, col]*> [WHERE <predicate>] [LIMIT <n>]
//! ```
//!
//! The table is implicit. Predicates compare a column against a literal
//! (`=`, `!=`, `<>`, `<`, `<=`, `>`, `>=`) or test `IS [NOT] NULL`, and combine
//! with `AND`, `OR`, `NOT` and parentheses. Keywords are case-insensitive,
//! string literals are single-quoted (`''` escapes a quote) and column names
//! that are not plain identifiers may be double-quoted.
//!
//! Evaluation uses three-valued logic: a comparison involving a null cell is
//! unknown, and only rows whose predicate is definitely true are returned.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;

use crate::ingest::{parse_date, parse_timestamp, ColumnTable, PrimitiveType, Row, Value};

/// Row cap applied when a query has no `LIMIT`.
pub const DEFAULT_LIMIT: u64 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub projection: Projection,
    pub predicate: Option<Expr>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Compare { column: String, op: CmpOp, literal: Literal },
    IsNull { column: String, negated: bool },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Integer(i64),
    Float(f64),
    String(String),
    Boolean(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at offset {offset}: expected {}, found {found}", expected.join(" or "))]
pub struct SyntaxError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("unknown column \"{0}\"")]
    UnknownColumn(String),
    #[error("cannot compare {ptype} column \"{column}\" with {literal}")]
    TypeMismatch {
        column: String,
        ptype: PrimitiveType,
        literal: String,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Bind(#[from] BindError),
}

/// Wire form of a query error: `{offset, message}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WireError {
    pub offset: Option<usize>,
    pub message: String,
}

impl QueryError {
    pub fn to_wire(&self) -> WireError {
        WireError {
            offset: match self {
                QueryError::Syntax(e) => Some(e.offset),
                QueryError::Bind(_) => None,
            },
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    /// Source row index of each returned row.
    pub row_indices: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Select,
    From,
    Where,
    Limit,
    And,
    Or,
    Not,
    Is,
    Null,
    True,
    False,
    Star,
    Comma,
    LParen,
    RParen,
    Op(CmpOp),
    Ident(String),
    Str(String),
    Int(i64),
    Float(f64),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier \"{s}\""),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Int(i) => format!("number {i}"),
            Tok::Float(f) => format!("number {f}"),
            Tok::Op(op) => format!("'{}'", op.symbol()),
            Tok::Star => "'*'".into(),
            Tok::Comma => "','".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Eof => "end of input".into(),
            kw => format!("{kw:?}").to_uppercase(),
        }
    }
}

const KEYWORDS: [(&str, Tok); 11] = [
    ("SELECT", Tok::Select),
    ("FROM", Tok::From),
    ("WHERE", Tok::Where),
    ("LIMIT", Tok::Limit),
    ("AND", Tok::And),
    ("OR", Tok::Or),
    ("NOT", Tok::Not),
    ("IS", Tok::Is),
    ("NULL", Tok::Null),
    ("TRUE", Tok::True),
    ("FALSE", Tok::False),
];

fn keyword(word: &str) -> Option<Tok> {
    KEYWORDS
        .iter()
        .find(|(kw, _)| kw.eq_ignore_ascii_case(word))
        .map(|(_, tok)| tok.clone())
}

fn is_bare_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && keyword(s).is_none()
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, expected: &str, found: String| SyntaxError {
        offset,
        expected: vec![expected.to_string()],
        found,
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'*' => {
                i += 1;
                Tok::Star
            }
            b',' => {
                i += 1;
                Tok::Comma
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'=' => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 2;
                Tok::Op(CmpOp::Ne)
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    Tok::Op(CmpOp::Le)
                }
                Some(b'>') => {
                    i += 2;
                    Tok::Op(CmpOp::Ne)
                }
                _ => {
                    i += 1;
                    Tok::Op(CmpOp::Lt)
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    Tok::Op(CmpOp::Ge)
                } else {
                    i += 1;
                    Tok::Op(CmpOp::Gt)
                }
            }
            b'\'' | b'"' => {
                let quote = c;
                let mut text = String::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => {
                            let what = if quote == b'\'' { "closing quote" } else { "closing double quote" };
                            return Err(err(start, what, "end of input".into()));
                        }
                        Some(&q) if q == quote => {
                            if bytes.get(i + 1) == Some(&quote) {
                                text.push(quote as char);
                                i += 2;
                            } else {
                                i += 1;
                                break;
                            }
                        }
                        Some(_) => {
                            let ch = src[i..].chars().next().expect("in bounds");
                            text.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                if quote == b'\'' {
                    Tok::Str(text)
                } else {
                    Tok::Ident(text)
                }
            }
            b'-' | b'0'..=b'9' => {
                if c == b'-' && !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                    return Err(err(start, "number", "'-'".into()));
                }
                i += 1;
                while bytes.get(i).is_some_and(u8::is_ascii_digit) {
                    i += 1;
                }
                let mut is_float = false;
                if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                    is_float = true;
                    i += 1;
                    while bytes.get(i).is_some_and(u8::is_ascii_digit) {
                        i += 1;
                    }
                }
                if matches!(bytes.get(i), Some(b'e' | b'E')) {
                    let mut j = i + 1;
                    if matches!(bytes.get(j), Some(b'+' | b'-')) {
                        j += 1;
                    }
                    if bytes.get(j).is_some_and(u8::is_ascii_digit) {
                        is_float = true;
                        i = j;
                        while bytes.get(i).is_some_and(u8::is_ascii_digit) {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                if is_float {
                    match text.parse::<f64>() {
                        Ok(f) if f.is_finite() => Tok::Float(f),
                        _ => return Err(err(start, "finite number", format!("'{text}'"))),
                    }
                } else {
                    match text.parse::<i64>() {
                        Ok(n) => Tok::Int(n),
                        Err(_) => return Err(err(start, "64-bit integer", format!("'{text}'"))),
                    }
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while bytes.get(i).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_') {
                    i += 1;
                }
                let word = &src[start..i];
                keyword(word).unwrap_or_else(|| Tok::Ident(word.to_string()))
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(err(start, "token", format!("'{ch}'")));
            }
        };
        out.push((start, tok));
    }
    out.push((src.len(), Tok::Eof));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let tok = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        tok
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    fn expect(&mut self, tok: Tok, name: &str) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(&[name])
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Tok::Ident(_) => match self.bump() {
                Tok::Ident(name) => Ok(name),
                _ => unreachable!(),
            },
            _ => self.fail(&["column name"]),
        }
    }

    fn query(&mut self) -> Result<QueryAst, SyntaxError> {
        self.expect(Tok::Select, "SELECT")?;
        let projection = if *self.peek() == Tok::Star {
            self.bump();
            Projection::Star
        } else {
            if !matches!(self.peek(), Tok::Ident(_)) {
                return self.fail(&["column name", "'*'"]);
            }
            let mut cols = vec![self.ident()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                cols.push(self.ident()?);
            }
            Projection::Columns(cols)
        };
        let predicate = if *self.peek() == Tok::Where {
            self.bump();
            Some(self.or_expr()?)
        } else {
            None
        };
        let limit = if *self.peek() == Tok::Limit {
            self.bump();
            match self.peek() {
                Tok::Int(n) if *n >= 0 => {
                    let n = *n as u64;
                    self.bump();
                    Some(n)
                }
                _ => return self.fail(&["non-negative integer"]),
            }
        } else {
            None
        };
        if *self.peek() != Tok::Eof {
            let mut expected = Vec::new();
            if predicate.is_none() && limit.is_none() {
                expected.push("WHERE");
            }
            if limit.is_none() {
                expected.push("LIMIT");
            }
            if predicate.is_some() && limit.is_none() {
                expected.extend(["AND", "OR"]);
            }
            if matches!(projection, Projection::Columns(_)) && predicate.is_none() && limit.is_none() {
                expected.push("','");
            }
            expected.push("end of input");
            return self.fail(&expected);
        }
        Ok(QueryAst {
            projection,
            predicate,
            limit,
        })
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.or_expr()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(inner);
        }
        if !matches!(self.peek(), Tok::Ident(_)) {
            return self.fail(&["column name", "NOT", "'('"]);
        }
        let column = self.ident()?;
        match self.peek().clone() {
            Tok::Op(op) => {
                self.bump();
                let literal = match self.peek().clone() {
                    Tok::Int(n) => Literal::Integer(n),
                    Tok::Float(f) => Literal::Float(f),
                    Tok::Str(s) => Literal::String(s),
                    Tok::True => Literal::Boolean(true),
                    Tok::False => Literal::Boolean(false),
                    _ => return self.fail(&["literal"]),
                };
                self.bump();
                Ok(Expr::Compare { column, op, literal })
            }
            Tok::Is => {
                self.bump();
                let negated = if *self.peek() == Tok::Not {
                    self.bump();
                    true
                } else {
                    false
                };
                self.expect(Tok::Null, "NULL")?;
                Ok(Expr::IsNull { column, negated })
            }
            _ => self.fail(&["comparison operator", "IS"]),
        }
    }
}

/// Parses query text into an AST.
pub fn parse_query(text: &str) -> Result<QueryAst, SyntaxError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.query()
}

// ---------------------------------------------------------------------------
// Canonical rendering

fn write_ident(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    if is_bare_identifier(name) {
        f.write_str(name)
    } else {
        write!(f, "\"{}\"", name.replace('"', "\"\""))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Integer(n) => write!(f, "{n}"),
            Literal::Float(x) => write!(f, "{x:?}"),
            Literal::String(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Boolean(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Compare { column, op, literal } => {
                write_ident(f, column)?;
                write!(f, " {} {literal}", op.symbol())
            }
            Expr::IsNull { column, negated } => {
                write_ident(f, column)?;
                f.write_str(if *negated { " IS NOT NULL" } else { " IS NULL" })
            }
            Expr::And(a, b) => write!(f, "({a} AND {b})"),
            Expr::Or(a, b) => write!(f, "({a} OR {b})"),
            Expr::Not(e) => write!(f, "NOT ({e})"),
        }
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::Star => f.write_str("*")?,
            Projection::Columns(cols) => {
                for (i, c) in cols.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_ident(f, c)?;
                }
            }
        }
        if let Some(pred) = &self.predicate {
            write!(f, " WHERE {pred}")?;
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Binding and evaluation

#[derive(Debug, Clone)]
enum Bound {
    Compare { col: usize, op: CmpOp, literal: Value },
    IsNull { col: usize, negated: bool },
    And(Box<Bound>, Box<Bound>),
    Or(Box<Bound>, Box<Bound>),
    Not(Box<Bound>),
}

fn bind_literal(column: &str, ptype: PrimitiveType, lit: &Literal) -> Result<Value, BindError> {
    let value = match (ptype, lit) {
        (PrimitiveType::Integer, Literal::Integer(n)) => Some(Value::Integer(*n)),
        (PrimitiveType::Integer, Literal::Float(x)) => Some(Value::Float(*x)),
        (PrimitiveType::Float, Literal::Integer(n)) => Some(Value::Float(*n as f64)),
        (PrimitiveType::Float, Literal::Float(x)) => Some(Value::Float(*x)),
        (PrimitiveType::String, Literal::String(s)) => Some(Value::String(s.clone())),
        (PrimitiveType::Boolean, Literal::Boolean(b)) => Some(Value::Boolean(*b)),
        (PrimitiveType::Date, Literal::String(s)) => parse_date(s).map(Value::Date),
        (PrimitiveType::Timestamp, Literal::String(s)) => parse_timestamp(s)
            .or_else(|| parse_date(s).and_then(|d| d.and_hms_opt(0, 0, 0)))
            .map(Value::Timestamp),
        _ => None,
    };
    value.ok_or_else(|| BindError::TypeMismatch {
        column: column.to_string(),
        ptype,
        literal: lit.to_string(),
    })
}

fn bind(expr: &Expr, table: &ColumnTable) -> Result<Bound, BindError> {
    let resolve = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| BindError::UnknownColumn(name.to_string()))
    };
    Ok(match expr {
        Expr::Compare { column, op, literal } => {
            let col = resolve(column)?;
            let literal = bind_literal(column, table.schema()[col].ptype, literal)?;
            Bound::Compare { col, op: *op, literal }
        }
        Expr::IsNull { column, negated } => Bound::IsNull {
            col: resolve(column)?,
            negated: *negated,
        },
        Expr::And(a, b) => Bound::And(Box::new(bind(a, table)?), Box::new(bind(b, table)?)),
        Expr::Or(a, b) => Bound::Or(Box::new(bind(a, table)?), Box::new(bind(b, table)?)),
        Expr::Not(e) => Bound::Not(Box::new(bind(e, table)?)),
    })
}

fn compare_cell(cell: &Value, literal: &Value) -> Option<Ordering> {
    match (cell, literal) {
        (Value::Null, _) => None,
        (Value::Integer(a), Value::Float(b)) => (*a as f64).partial_cmp(b),
        _ => Some(cell.cmp(literal)),
    }
}

/// Kleene evaluation; `None` is unknown.
fn eval(expr: &Bound, table: &ColumnTable, row: usize) -> Option<bool> {
    match expr {
        Bound::Compare { col, op, literal } => {
            compare_cell(&table.value(row, *col), literal).map(|ord| op.holds(ord))
        }
        Bound::IsNull { col, negated } => Some(table.column_at(*col).is_null(row) != *negated),
        Bound::And(a, b) => match (eval(a, table, row), eval(b, table, row)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Bound::Or(a, b) => match (eval(a, table, row), eval(b, table, row)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        Bound::Not(e) => eval(e, table, row).map(|b| !b),
    }
}

/// Runs a parsed query against the table. The table is only read.
pub fn execute_query(query: &QueryAst, table: &ColumnTable) -> Result<QueryResult, BindError> {
    let columns: Vec<usize> = match &query.projection {
        Projection::Star => (0..table.column_count()).collect(),
        Projection::Columns(names) => names
            .iter()
            .map(|n| table.column_index(n).ok_or_else(|| BindError::UnknownColumn(n.clone())))
            .collect::<Result<_, _>>()?,
    };
    let predicate = query.predicate.as_ref().map(|p| bind(p, table)).transpose()?;
    let limit = query.limit.unwrap_or(DEFAULT_LIMIT) as usize;

    let row_indices: Vec<usize> = (0..table.row_count())
        .filter(|&r| predicate.as_ref().is_none_or(|p| eval(p, table, r) == Some(true)))
        .take(limit)
        .collect();
    Ok(QueryResult {
        columns: columns.iter().map(|&c| table.schema()[c].name.clone()).collect(),
        rows: row_indices.iter().map(|&r| table.project_row(r, &columns)).collect(),
        row_indices,
    })
}

/// Parses and executes in one step.
pub fn run_query(text: &str, table: &ColumnTable) -> Result<QueryResult, QueryError> {
    let ast = parse_query(text)?;
    Ok(execute_query(&ast, table)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_csv, CsvOptions};

    fn table() -> ColumnTable {
        parse_csv("id,age\n1,20\n2,30\n3,\n", "t", CsvOptions::default()).unwrap()
    }

    #[test]
    fn parses_star_with_limit() {
        let q = parse_query("SELECT * LIMIT 5").unwrap();
        assert_eq!(q.projection, Projection::Star);
        assert_eq!(q.predicate, None);
        assert_eq!(q.limit, Some(5));
    }

    #[test]
    fn parses_is_null() {
        let q = parse_query("select ssn where maiden is null").unwrap();
        assert_eq!(q.projection, Projection::Columns(vec!["ssn".into()]));
        assert_eq!(
            q.predicate,
            Some(Expr::IsNull {
                column: "maiden".into(),
                negated: false
            })
        );
    }

    #[test]
    fn select_from_fails_at_offset_7() {
        let err = parse_query("SELECT FROM").unwrap_err();
        assert_eq!(err.offset, 7);
        assert!(err.expected.contains(&"column name".to_string()));
    }

    #[test]
    fn misspelled_select_fails_at_offset_0() {
        assert_eq!(parse_query("SELEC *").unwrap_err().offset, 0);
    }

    #[test]
    fn other_syntax_errors() {
        assert_eq!(parse_query("SELECT a WHERE").unwrap_err().offset, 14);
        assert_eq!(parse_query("SELECT a WHERE b = 'x").unwrap_err().offset, 19);
        assert_eq!(parse_query("SELECT a LIMIT -1").unwrap_err().offset, 15);
        assert_eq!(parse_query("SELECT a b").unwrap_err().offset, 9);
        assert_eq!(parse_query("SELECT a WHERE (b IS NULL").unwrap_err().offset, 25);
    }

    #[test]
    fn null_comparison_is_not_true() {
        let t = table();
        let r = run_query("SELECT * WHERE age > 25", &t).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Integer(2), Value::Integer(30)]]);
        let r = run_query("SELECT * WHERE NOT age > 25", &t).unwrap();
        assert_eq!(r.row_indices, vec![0]);
        let r = run_query("SELECT id WHERE age > 25 OR age IS NULL", &t).unwrap();
        assert_eq!(r.row_indices, vec![1, 2]);
    }

    #[test]
    fn projection_without_limit() {
        let r = run_query("SELECT id", &table()).unwrap();
        assert_eq!(r.columns, vec!["id"]);
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows.iter().all(|row| row.len() == 1));
    }

    #[test]
    fn default_limit_applies() {
        let body: String = (0..500).map(|i| format!("{i}\n")).collect();
        let t = parse_csv(&format!("n\n{body}"), "t", CsvOptions::default()).unwrap();
        assert_eq!(run_query("SELECT *", &t).unwrap().rows.len(), DEFAULT_LIMIT as usize);
    }

    #[test]
    fn bind_errors() {
        let t = table();
        assert_eq!(
            run_query("SELECT nope", &t).unwrap_err(),
            QueryError::Bind(BindError::UnknownColumn("nope".into()))
        );
        assert!(matches!(
            run_query("SELECT * WHERE age = 'x'", &t).unwrap_err(),
            QueryError::Bind(BindError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn dates_compare_against_string_literals() {
        let t = parse_csv("d\n2024-01-01\n2023-06-30\n", "t", CsvOptions::default()).unwrap();
        let r = run_query("SELECT * WHERE d >= '2024-01-01'", &t).unwrap();
        assert_eq!(r.row_indices, vec![0]);
    }

    #[test]
    fn render_quotes_odd_identifiers() {
        let q = parse_query("SELECT \"first name\", \"select\" WHERE \"a\"\"b\" = 'it''s' LIMIT 3").unwrap();
        let text = q.to_string();
        assert_eq!(text, "SELECT \"first name\", \"select\" WHERE \"a\"\"b\" = 'it''s' LIMIT 3");
        assert_eq!(parse_query(&text).unwrap(), q);
    }

    #[test]
    fn wire_error_shape() {
        let err = QueryError::from(parse_query("SELECT FROM").unwrap_err());
        let wire = serde_json::to_value(err.to_wire()).unwrap();
        assert_eq!(wire["offset"], 7);
        assert!(wire["message"].as_str().unwrap().contains("FROM"));
    }
}
