//! Generators and brute-force oracles shared by the property tests and the
//! acceptance suite. Oracles work on plain Rust data, never on the engine's
//! own structures.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::Rng;
use semprof::ingest::ColumnTable;
use semprof::query::{CmpOp, Expr, Literal, Projection, QueryAst};

pub const WORDS: [&str; 6] = ["ant", "bee", "cat", "Dog", "o'neil", "eel fish"];
pub const COLUMNS: [&str; 4] = ["n", "x", "s", "b"];

/// A table of one integer, float, string and boolean column kept as plain
/// vectors alongside the parsed form.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub n: Vec<Option<i64>>,
    pub x: Vec<Option<f64>>,
    pub s: Vec<Option<String>>,
    pub b: Vec<Option<bool>>,
}

impl RawTable {
    /// Row 0 is fully populated so every column keeps its type. `domain`
    /// bounds the number of distinct values per column.
    pub fn random(rng: &mut impl Rng, rows: usize, domain: i64, null_rate: f64) -> Self {
        let rows = rows.max(1);
        let mut t = RawTable {
            n: Vec::new(),
            x: Vec::new(),
            s: Vec::new(),
            b: Vec::new(),
        };
        for r in 0..rows {
            let keep = |rng: &mut dyn rand::RngCore| r == 0 || !rng.random_bool(null_rate);
            t.n.push(keep(rng).then(|| rng.random_range(-domain..=domain)));
            t.x.push(keep(rng).then(|| rng.random_range(-4 * domain..=4 * domain) as f64 / 4.0));
            let w = WORDS.len().min(domain.max(1) as usize);
            t.s.push(keep(rng).then(|| WORDS[rng.random_range(0..w)].to_string()));
            t.b.push(keep(rng).then(|| rng.random_bool(0.5)));
        }
        t
    }

    /// Like [`RawTable::random`] with a random row count below `max_rows`.
    pub fn up_to(rng: &mut impl Rng, max_rows: usize, domain: i64, null_rate: f64) -> Self {
        let rows = rng.random_range(1..max_rows);
        Self::random(rng, rows, domain, null_rate)
    }

    pub fn rows(&self) -> usize {
        self.n.len()
    }

    pub fn cells(&self, r: usize) -> Vec<String> {
        vec![
            self.n[r].map(|v| v.to_string()).unwrap_or_default(),
            self.x[r].map(|v| format!("{v:.2}")).unwrap_or_default(),
            self.s[r].clone().unwrap_or_default(),
            self.b[r].map(|v| v.to_string()).unwrap_or_default(),
        ]
    }

    pub fn table(&self) -> ColumnTable {
        let records: Vec<Vec<String>> = (0..self.rows()).map(|r| self.cells(r)).collect();
        let headers: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
        ColumnTable::from_raw("t", &headers, &records).expect("generated tables parse")
    }

    /// Displayed value of a cell, `None` for null.
    pub fn text(&self, col: &str, r: usize) -> Option<String> {
        match col {
            "n" => self.n[r].map(|v| v.to_string()),
            "x" => self.x[r].map(|v| format!("{v:?}")),
            "s" => self.s[r].clone(),
            "b" => self.b[r].map(|v| v.to_string()),
            _ => panic!("unknown column {col}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Queries

fn random_literal(rng: &mut impl Rng, col: &str) -> Literal {
    let quarter = |rng: &mut dyn rand::RngCore| rng.random_range(-12i64..=12) as f64 / 4.0;
    match col {
        "n" | "x" if rng.random_bool(0.5) => Literal::Integer(rng.random_range(-3..=3)),
        "n" | "x" => Literal::Float(quarter(rng)),
        "s" => Literal::String(WORDS[rng.random_range(0..WORDS.len())].to_string()),
        _ => Literal::Boolean(rng.random_bool(0.5)),
    }
}

pub fn random_expr(rng: &mut impl Rng, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.35) {
        let column = COLUMNS[rng.random_range(0..COLUMNS.len())].to_string();
        if rng.random_bool(0.2) {
            return Expr::IsNull {
                column,
                negated: rng.random_bool(0.5),
            };
        }
        let op = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge][rng.random_range(0..6)];
        let literal = random_literal(rng, &column);
        return Expr::Compare { column, op, literal };
    }
    match rng.random_range(0..3) {
        0 => Expr::And(Box::new(random_expr(rng, depth - 1)), Box::new(random_expr(rng, depth - 1))),
        1 => Expr::Or(Box::new(random_expr(rng, depth - 1)), Box::new(random_expr(rng, depth - 1))),
        _ => Expr::Not(Box::new(random_expr(rng, depth - 1))),
    }
}

pub fn random_query(rng: &mut impl Rng) -> QueryAst {
    let projection = if rng.random_bool(0.3) {
        Projection::Star
    } else {
        let k = rng.random_range(1..=COLUMNS.len());
        let mut cols: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
        for i in (1..cols.len()).rev() {
            cols.swap(i, rng.random_range(0..=i));
        }
        cols.truncate(k);
        Projection::Columns(cols)
    };
    QueryAst {
        projection,
        predicate: rng.random_bool(0.85).then(|| random_expr(rng, 3)),
        limit: rng.random_bool(0.4).then(|| rng.random_range(0..30)),
    }
}

fn holds(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord.is_eq(),
        CmpOp::Ne => ord.is_ne(),
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Gt => ord.is_gt(),
        CmpOp::Ge => ord.is_ge(),
    }
}

/// Naive per-row evaluation with unknown as `None`.
pub fn oracle_eval(e: &Expr, raw: &RawTable, r: usize) -> Option<bool> {
    match e {
        Expr::IsNull { column, negated } => Some(raw.text(column, r).is_none() != *negated),
        Expr::Compare { column, op, literal } => {
            let ord = match (column.as_str(), literal) {
                ("n", Literal::Integer(l)) => raw.n[r]?.cmp(l),
                ("n", Literal::Float(l)) => (raw.n[r]? as f64).partial_cmp(l)?,
                ("x", Literal::Integer(l)) => raw.x[r]?.partial_cmp(&(*l as f64))?,
                ("x", Literal::Float(l)) => raw.x[r]?.partial_cmp(l)?,
                ("s", Literal::String(l)) => raw.s[r].as_deref()?.cmp(l.as_str()),
                ("b", Literal::Boolean(l)) => raw.b[r]?.cmp(l),
                other => panic!("ill-typed literal {other:?}"),
            };
            Some(holds(*op, ord))
        }
        Expr::Not(a) => oracle_eval(a, raw, r).map(|v| !v),
        Expr::And(a, b) => {
            let (a, b) = (oracle_eval(a, raw, r), oracle_eval(b, raw, r));
            if a == Some(false) || b == Some(false) {
                Some(false)
            } else if a == Some(true) && b == Some(true) {
                Some(true)
            } else {
                None
            }
        }
        Expr::Or(a, b) => {
            let (a, b) = (oracle_eval(a, raw, r), oracle_eval(b, raw, r));
            if a == Some(true) || b == Some(true) {
                Some(true)
            } else if a == Some(false) && b == Some(false) {
                Some(false)
            } else {
                None
            }
        }
    }
}

/// Row indices the query should return.
pub fn oracle_rows(q: &QueryAst, raw: &RawTable) -> Vec<usize> {
    let limit = q.limit.unwrap_or(200) as usize;
    (0..raw.rows())
        .filter(|&r| q.predicate.as_ref().is_none_or(|p| oracle_eval(p, raw, r) == Some(true)))
        .take(limit)
        .collect()
}

// ---------------------------------------------------------------------------
// Statistics

/// Sort, then interpolate between neighbours at position `p * (n - 1)`.
pub fn oracle_quantiles(xs: &[f64]) -> [f64; 5] {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        if i + 1 < v.len() {
            v[i] * (1.0 - frac) + v[i + 1] * frac
        } else {
            v[i]
        }
    };
    [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)]
}

/// Multiset of items as (item, count) pairs by linear search.
pub fn multiset<T: PartialEq + Clone>(items: &[T]) -> Vec<(T, usize)> {
    let mut out: Vec<(T, usize)> = Vec::new();
    for it in items {
        match out.iter_mut().find(|(k, _)| k == it) {
            Some((_, n)) => *n += 1,
            None => out.push((it.clone(), 1)),
        }
    }
    out
}

pub fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
