//! Profile document export, chart data and a static HTML report.
//!
//! The document is JSON with exactly these top-level keys:
//!
//! * `Semantic Context`: `Table Summary`, `Attribute Hierarchy`, `Column Summary`
//! * `Statistical Profile`: target → kind → measurements (`HasDuplicate`,
//!   `UniqueRatio`, `MissingFraction`, ...)
//! * `Semantic Profile`: target → kind → `{<expectation key>, Thought}`, plus
//!   `HigherOrderType` for classified columns and groups
//! * `Semantic Review`: target → kind → `{is_error, reasoning, status, note}`
//! * `Meta`: `Table`, `Rows`, `Columns`, `ToolVersion`, `Provider`
//!
//! Targets are `*` for the table, a column name, or `[A, B]` for a column
//! group. Entries whose step has not finished hold `{"Status": "pending" |
//! "running" | "stale" | "failed"}` (failed entries add `Error`).

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::context::AttributeHierarchy;
use crate::ingest::{ColumnTable, PrimitiveType, Value};
use crate::pipeline::{count_alerts, Phase, Session, StepState, StepStatus};
use crate::semantics::HigherOrderType;
use crate::statprofile::{Target, OTHER_BUCKET};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Most bins a histogram gets.
pub const MAX_BINS: usize = 30;
/// Bars shown before the rest collapse into the other bucket.
pub const MAX_BARS: usize = 20;
/// Most points a coordinate map carries.
pub const MAX_POINTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to export: no step has finished")]
    NothingToExport,
    #[error("no chart applies to {0}")]
    NoChartApplicable(String),
}

pub type Section = IndexMap<String, IndexMap<String, Json>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(rename = "Table")]
    pub table: String,
    #[serde(rename = "Rows")]
    pub rows: usize,
    #[serde(rename = "Columns")]
    pub columns: usize,
    #[serde(rename = "ToolVersion")]
    pub tool_version: String,
    #[serde(rename = "Provider")]
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDocument {
    #[serde(rename = "Semantic Context")]
    pub semantic_context: IndexMap<String, Json>,
    #[serde(rename = "Statistical Profile")]
    pub statistical_profile: Section,
    #[serde(rename = "Semantic Profile")]
    pub semantic_profile: Section,
    #[serde(rename = "Semantic Review")]
    pub semantic_review: Section,
    #[serde(rename = "Meta")]
    pub meta: Meta,
}

impl ProfileDocument {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents serialize")
    }

    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn hierarchy(&self) -> Option<AttributeHierarchy> {
        AttributeHierarchy::from_json(self.semantic_context.get("Attribute Hierarchy")?).ok()
    }
}

fn marker(state: &StepState) -> Json {
    let mut m = serde_json::Map::new();
    m.insert("Status".into(), json!(state.status));
    if let Some(e) = &state.error {
        m.insert("Error".into(), json!(e));
    }
    Json::Object(m)
}

/// Builds the document from the session's current state.
pub fn export_json(s: &Session, provider: &str) -> Result<ProfileDocument, ReportError> {
    if !s.any_done() {
        return Err(ReportError::NothingToExport);
    }
    let steps = s.steps();
    let part = |id: &crate::pipeline::StepId, value: Option<Json>| -> Json {
        match (steps.get(id), value) {
            (Some(st), Some(v)) if st.status == StepStatus::Done => v,
            (Some(st), _) => marker(st),
            (None, v) => v.unwrap_or(Json::Null),
        }
    };
    use crate::pipeline::StepId;
    let mut semantic_context = IndexMap::new();
    semantic_context.insert(
        "Table Summary".into(),
        part(&StepId::table_summary(), s.table_summary().map(|t| json!(t))),
    );
    semantic_context.insert(
        "Attribute Hierarchy".into(),
        part(&StepId::hierarchy(), s.hierarchy().map(AttributeHierarchy::to_json)),
    );
    semantic_context.insert(
        "Column Summary".into(),
        part(&StepId::column_summaries(), s.column_summaries().map(|m| json!(m))),
    );

    let mut stat = Section::new();
    let mut sem = Section::new();
    let mut review = Section::new();
    for (id, state) in steps {
        let (Some(kind), Some(target)) = (id.kind(), id.scope.as_ref()) else {
            continue;
        };
        let (section, value) = match id.phase {
            Phase::Stat => (&mut stat, s.stat(id).map(|e| e.to_payload())),
            Phase::Sem => (&mut sem, s.sem(id).map(|p| p.to_payload())),
            Phase::Review => (&mut review, s.verdict(id).map(|v| v.to_payload())),
            _ => continue,
        };
        let value = match value {
            Some(v) if state.status == StepStatus::Done => v,
            _ => marker(state),
        };
        section.entry(target.clone()).or_default().insert(kind.as_str().into(), value);
    }
    if let Some(h) = s.hierarchy() {
        for leaf in h.leaves() {
            let done = s.status(&StepId::classify(&leaf.path)) == Some(StepStatus::Done);
            let Some(assignment) = s.classification(&leaf.path).filter(|_| done) else {
                continue;
            };
            for a in &assignment.assignments {
                let target = if a.columns.len() == 1 {
                    Target::column(a.columns[0].clone())
                } else {
                    Target::Group(a.columns.clone())
                };
                sem.entry(target.to_string())
                    .or_default()
                    .insert("HigherOrderType".into(), json!(a.hot));
            }
        }
    }

    let t = s.table();
    Ok(ProfileDocument {
        semantic_context,
        statistical_profile: stat,
        semantic_profile: sem,
        semantic_review: review,
        meta: Meta {
            table: t.name().to_string(),
            rows: t.row_count(),
            columns: t.column_count(),
            tool_version: TOOL_VERSION.to_string(),
            provider: provider.to_string(),
        },
    })
}

// ---------------------------------------------------------------------------
// Charts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartSpec {
    /// Equal-width bins; `edges` has one more entry than `counts`. Dates are
    /// in days and timestamps in seconds since 1970-01-01.
    Histogram {
        column: String,
        unit: String,
        edges: Vec<f64>,
        counts: Vec<usize>,
    },
    Bar {
        column: String,
        bars: Vec<(String, usize)>,
    },
    Map {
        columns: Vec<String>,
        #[serde(flatten)]
        payload: MapPayload,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapPayload {
    /// `[latitude, longitude]` pairs.
    Points(Vec<[f64; 2]>),
    /// Region code or name with its row count.
    Regions(Vec<(String, usize)>),
}

fn non_null(t: &ColumnTable, col: &str) -> Result<Vec<Value>, ReportError> {
    let data = t
        .column(col)
        .ok_or_else(|| ReportError::NoChartApplicable(format!("unknown column {col}")))?;
    Ok(data.values().filter(|v| !v.is_null()).collect())
}

fn counts_desc(values: Vec<Value>) -> Vec<(String, usize)> {
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for v in values {
        *counts.entry(v.to_string()).or_insert(0) += 1;
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1));
    v
}

/// Equal-width histogram with `min(30, ceil(sqrt(n)))` bins.
pub fn histogram(xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    if xs.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return (vec![min - 0.5, min + 0.5], vec![xs.len()]);
    }
    let bins = ((xs.len() as f64).sqrt().ceil() as usize).clamp(1, MAX_BINS);
    let width = (max - min) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| min + i as f64 * width).collect();
    edges.push(max);
    let mut counts = vec![0; bins];
    for &x in xs {
        let i = (((x - min) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    (edges, counts)
}

pub fn build_chart_data(
    t: &ColumnTable,
    target: &Target,
    hot: Option<HigherOrderType>,
) -> Result<ChartSpec, ReportError> {
    let columns: Vec<String> = target.columns().iter().map(|c| c.to_string()).collect();
    if let Target::Group(cols) = target {
        if cols.len() != 2 || hot.is_some_and(|h| h != HigherOrderType::LatLong) {
            return Err(ReportError::NoChartApplicable(target.to_string()));
        }
        let (Some(lat), Some(lon)) = (t.column(&cols[0]), t.column(&cols[1])) else {
            return Err(ReportError::NoChartApplicable(target.to_string()));
        };
        let points: Vec<[f64; 2]> = (0..t.row_count())
            .filter_map(|r| Some([lat.get(r).as_f64()?, lon.get(r).as_f64()?]))
            .filter(|[a, b]| (-90.0..=90.0).contains(a) && (-180.0..=180.0).contains(b))
            .take(MAX_POINTS)
            .collect();
        return Ok(ChartSpec::Map {
            columns,
            payload: MapPayload::Points(points),
        });
    }
    let Target::Column(col) = target else {
        return Err(ReportError::NoChartApplicable(target.to_string()));
    };
    let ptype = t
        .ptype(col)
        .ok_or_else(|| ReportError::NoChartApplicable(format!("unknown column {col}")))?;
    match hot {
        Some(h) if h.is_geographic() && h != HigherOrderType::LatLong => {
            return Ok(ChartSpec::Map {
                columns,
                payload: MapPayload::Regions(counts_desc(non_null(t, col)?)),
            });
        }
        Some(HigherOrderType::Category) => return bar(t, col),
        _ => {}
    }
    match ptype {
        PrimitiveType::Boolean => bar(t, col),
        PrimitiveType::Integer | PrimitiveType::Float | PrimitiveType::Date | PrimitiveType::Timestamp => {
            let xs: Vec<f64> = non_null(t, col)?.iter().filter_map(Value::as_f64).collect();
            if xs.is_empty() {
                return Err(ReportError::NoChartApplicable(col.clone()));
            }
            let (edges, counts) = histogram(&xs);
            let unit = match ptype {
                PrimitiveType::Date => "days",
                PrimitiveType::Timestamp => "seconds",
                _ => "value",
            };
            Ok(ChartSpec::Histogram {
                column: col.clone(),
                unit: unit.into(),
                edges,
                counts,
            })
        }
        PrimitiveType::String => Err(ReportError::NoChartApplicable(col.clone())),
    }
}

fn bar(t: &ColumnTable, col: &str) -> Result<ChartSpec, ReportError> {
    let all = counts_desc(non_null(t, col)?);
    let mut bars: Vec<(String, usize)> = all.iter().take(MAX_BARS).cloned().collect();
    let rest: usize = all.iter().skip(MAX_BARS).map(|(_, n)| n).sum();
    if rest > 0 {
        bars.push((OTHER_BUCKET.to_string(), rest));
    }
    Ok(ChartSpec::Bar {
        column: col.to_string(),
        bars,
    })
}

/// One chart per charted column, with coordinate pairs as a single map.
pub fn session_charts(s: &Session) -> Vec<ChartSpec> {
    let t = s.table();
    let mut grouped = std::collections::HashSet::new();
    let mut charts = Vec::new();
    if let Some(h) = s.hierarchy() {
        for leaf in h.leaves() {
            if let Some(a) = s.classification(&leaf.path) {
                for g in a.groups() {
                    grouped.extend(g.columns.iter().cloned());
                    if let Ok(c) = build_chart_data(t, &Target::Group(g.columns.clone()), Some(g.hot)) {
                        charts.push(c);
                    }
                }
            }
        }
    }
    for col in t.column_names() {
        if grouped.contains(col) {
            continue;
        }
        if let Ok(c) = build_chart_data(t, &Target::column(col), s.higher_order_type(col)) {
            charts.push(c);
        }
    }
    charts
}

// ---------------------------------------------------------------------------
// Static HTML

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;max-width:1100px;margin:2em auto;color:#222}\
h2{border-bottom:1px solid #ccc}section.target{margin:1em 0;padding:.5em 1em;border:1px solid #ddd;border-radius:4px}\
.alert{color:#c00;font-weight:bold}.ok{color:#080;font-weight:bold}.status{color:#888;font-style:italic}\
pre{background:#f6f6f6;padding:.5em;overflow-x:auto}ul.tree{list-style:none}.count{color:#c00}\
table.kv td{padding:2px 8px;vertical-align:top}svg{background:#fafafa;border:1px solid #eee}";

fn render_tree(out: &mut String, h: &AttributeHierarchy, counts: &IndexMap<String, usize>) {
    fn walk(out: &mut String, nodes: &[crate::context::ConceptNode], prefix: &str, counts: &IndexMap<String, usize>) {
        out.push_str("<ul class=\"tree\">");
        for n in nodes {
            let path = if prefix.is_empty() {
                n.name.clone()
            } else {
                format!("{prefix}/{}", n.name)
            };
            let c = counts.get(&path).copied().unwrap_or(0);
            let _ = write!(out, "<li>{}", esc(&n.name));
            if c > 0 {
                let _ = write!(out, " <span class=\"count\">({c} alerts)</span>");
            }
            match &n.content {
                crate::context::NodeContent::Concepts(ch) => walk(out, ch, &path, counts),
                crate::context::NodeContent::Columns(cols) => {
                    let links: Vec<String> = cols
                        .iter()
                        .map(|c| format!("<a href=\"#t-{}\">{}</a>", esc(c), esc(c)))
                        .collect();
                    let _ = write!(out, ": {}", links.join(", "));
                }
            }
            out.push_str("</li>");
        }
        out.push_str("</ul>");
    }
    walk(out, &h.roots, "", counts);
}

fn status_of(v: &Json) -> Option<&str> {
    v.get("Status").and_then(Json::as_str)
}

fn render_stat(out: &mut String, kind: &str, v: &Json) {
    if let Some(st) = status_of(v) {
        let _ = write!(out, "<p class=\"status\">{kind}: {st}</p>");
        return;
    }
    let _ = write!(out, "<table class=\"kv\"><tr><td colspan=2><b>{}</b></td></tr>", esc(kind));
    if let Some(obj) = v.as_object() {
        for (k, val) in obj {
            let shown = match (k.as_str(), val.as_f64()) {
                ("MissingFraction", Some(f)) => format!("{:.1}%", f * 100.0),
                ("UniqueRatio", Some(f)) => format!("{:.1}%", f * 100.0),
                _ => match val {
                    Json::String(s) => s.clone(),
                    other => serde_json::to_string(other).expect("serializes"),
                },
            };
            let _ = write!(out, "<tr><td>{}</td><td><code>{}</code></td></tr>", esc(k), esc(&shown));
        }
    }
    out.push_str("</table>");
}

fn render_chart(c: &ChartSpec) -> String {
    const W: f64 = 480.0;
    const H: f64 = 160.0;
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">");
    let bars = |svg: &mut String, counts: &[usize], labels: Option<&[String]>| {
        let max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        let w = W / counts.len().max(1) as f64;
        for (i, n) in counts.iter().enumerate() {
            let h = *n as f64 / max * (H - 20.0);
            let title = labels.map_or(n.to_string(), |l| format!("{}: {n}", l[i]));
            let _ = write!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#4a78b5\"><title>{}</title></rect>",
                i as f64 * w + 1.0,
                H - h,
                (w - 2.0).max(1.0),
                h,
                esc(&title)
            );
        }
    };
    match c {
        ChartSpec::Histogram { counts, .. } => bars(&mut svg, counts, None),
        ChartSpec::Bar { bars: b, .. } => {
            let counts: Vec<usize> = b.iter().map(|x| x.1).collect();
            let labels: Vec<String> = b.iter().map(|x| x.0.clone()).collect();
            bars(&mut svg, &counts, Some(&labels));
        }
        ChartSpec::Map {
            payload: MapPayload::Regions(r),
            ..
        } => {
            let counts: Vec<usize> = r.iter().map(|x| x.1).collect();
            let labels: Vec<String> = r.iter().map(|x| x.0.clone()).collect();
            bars(&mut svg, &counts, Some(&labels));
        }
        ChartSpec::Map {
            payload: MapPayload::Points(p),
            ..
        } => {
            let (mut lat0, mut lat1, mut lon0, mut lon1) = (90.0f64, -90.0f64, 180.0f64, -180.0f64);
            for [a, b] in p {
                lat0 = lat0.min(*a);
                lat1 = lat1.max(*a);
                lon0 = lon0.min(*b);
                lon1 = lon1.max(*b);
            }
            let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
            for [a, b] in p {
                let x = (b - lon0) / span(lon0, lon1) * (W - 10.0) + 5.0;
                let y = H - ((a - lat0) / span(lat0, lat1) * (H - 10.0) + 5.0);
                let _ = write!(svg, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"1.5\" fill=\"#4a78b5\"/>");
            }
        }
    }
    svg.push_str("</svg>");
    svg
}

fn chart_key(c: &ChartSpec) -> String {
    match c {
        ChartSpec::Histogram { column, .. } | ChartSpec::Bar { column, .. } => column.clone(),
        ChartSpec::Map { columns, .. } if columns.len() == 1 => columns[0].clone(),
        ChartSpec::Map { columns, .. } => Target::Group(columns.clone()).to_string(),
    }
}

/// A single self-contained HTML page. Error verdicts carry exactly one
/// `class="verdict-error"` marker each; other verdicts a green tick.
pub fn render_static_report(doc: &ProfileDocument, charts: &[ChartSpec]) -> String {
    let hierarchy = doc.hierarchy();
    let verdicts: Vec<(Target, bool)> = doc
        .semantic_review
        .iter()
        .flat_map(|(target, kinds)| {
            kinds.values().filter(|v| status_of(v).is_none()).map(move |v| {
                (
                    target.parse::<Target>().expect("infallible"),
                    v.get("is_error").and_then(Json::as_bool).unwrap_or(false),
                )
            })
        })
        .collect();
    let counts = count_alerts(hierarchy.as_ref(), &verdicts);

    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>Profile of {0}</title><style>{STYLE}</style></head><body>\
         <h1>Profile of {0}</h1><p>{1} rows, {2} columns. Provider: {3}. Version {4}.</p>",
        esc(&doc.meta.table),
        doc.meta.rows,
        doc.meta.columns,
        esc(&doc.meta.provider),
        esc(&doc.meta.tool_version)
    );
    let _ = write!(out, "<p><b>{} alerts in total.</b></p>", counts.get("").copied().unwrap_or(0));

    out.push_str("<h2>Semantic context</h2>");
    match doc.semantic_context.get("Table Summary") {
        Some(Json::String(s)) => {
            let html = esc(s).replace("&lt;u&gt;", "<u>").replace("&lt;/u&gt;", "</u>");
            let _ = write!(out, "<p>{html}</p>");
        }
        Some(v) => {
            let _ = write!(out, "<p class=\"status\">Table summary: {}</p>", esc(status_of(v).unwrap_or("absent")));
        }
        None => {}
    }
    if let Some(h) = &hierarchy {
        render_tree(&mut out, h, &counts);
    }

    let mut targets: Vec<&String> = doc.statistical_profile.keys().collect();
    for t in doc.semantic_review.keys().chain(doc.semantic_profile.keys()) {
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let column_summaries = doc.semantic_context.get("Column Summary").and_then(Json::as_object);

    out.push_str("<h2>Profiles</h2>");
    for target in targets {
        let _ = write!(out, "<section class=\"target\" id=\"t-{0}\"><h3>{0}</h3>", esc(target));
        if let Some(s) = column_summaries.and_then(|m| m.get(target)).and_then(Json::as_str) {
            let _ = write!(out, "<p><i>{}</i></p>", esc(s));
        }
        let sem = doc.semantic_profile.get(target);
        if let Some(h) = sem.and_then(|m| m.get("HigherOrderType")).and_then(Json::as_str) {
            let _ = write!(out, "<p>Higher-order type: {}</p>", esc(h));
        }
        if let Some(c) = charts.iter().find(|c| &chart_key(c) == target) {
            out.push_str(&render_chart(c));
        }
        let stats = doc.statistical_profile.get(target);
        let reviews = doc.semantic_review.get(target);
        let mut kinds: Vec<&String> = stats.map(|m| m.keys().collect()).unwrap_or_default();
        for k in reviews.into_iter().flat_map(|m| m.keys()) {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        for kind in kinds {
            out.push_str("<div class=\"kind\">");
            if let Some(v) = stats.and_then(|m| m.get(kind)) {
                render_stat(&mut out, kind, v);
            }
            if let Some(p) = sem.and_then(|m| m.get(kind)) {
                match status_of(p) {
                    Some(st) => {
                        let _ = write!(out, "<p class=\"status\">Expectation: {st}</p>");
                    }
                    None => {
                        if let Some(obj) = p.as_object() {
                            for (k, v) in obj.iter().filter(|(k, _)| *k != "Thought") {
                                let _ = write!(out, "<p>Expected {}: <code>{}</code></p>", esc(k), esc(&v.to_string()));
                            }
                            if let Some(th) = obj.get("Thought").and_then(Json::as_str) {
                                let _ = write!(out, "<p>Thought: {}</p>", esc(th));
                            }
                        }
                    }
                }
            }
            if let Some(r) = reviews.and_then(|m| m.get(kind)) {
                match status_of(r) {
                    Some(st) => {
                        let _ = write!(out, "<p class=\"status\">Review: {st}</p>");
                    }
                    None => {
                        let is_error = r.get("is_error").and_then(Json::as_bool).unwrap_or(false);
                        let reasoning = r.get("reasoning").and_then(Json::as_str).unwrap_or("");
                        let status = r.get("status").and_then(Json::as_str).unwrap_or("machine");
                        if is_error {
                            let _ = write!(
                                out,
                                "<p><span class=\"verdict-error alert\" title=\"error\">&#10071;</span> {} <span class=\"status\">({status})</span></p>",
                                esc(reasoning)
                            );
                        } else {
                            let _ = write!(
                                out,
                                "<p><span class=\"verdict-ok ok\" title=\"no error\">&#10004;</span> {} <span class=\"status\">({status})</span></p>",
                                esc(reasoning)
                            );
                        }
                    }
                }
            }
            out.push_str("</div>");
        }
        out.push_str("</section>");
    }
    out.push_str("</body></html>\n");
    out
}
