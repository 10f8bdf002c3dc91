//! Acceptance suite: one PASS/FAIL line per criterion, each under a pinned
//! time limit. Exits non-zero when any criterion fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semprof::context::{group_columns, summarize_table, ContextEdit, ContextError, HIERARCHY_STEP, TABLE_SUMMARY_STEP};
use semprof::fixtures::{patient_script, patient_script_with, patient_table, PATIENT_MAIDEN_NULLS, PATIENT_ROWS};
use semprof::ingest::{parse_csv, ColumnTable, CsvOptions, Value};
use semprof::llm::{LlmError, MockProvider, MockScript, TranscriptRecorder};
use semprof::pipeline::{Phase, Session, Settings, StepFilter, StepId, StepStatus};
use semprof::query::{execute_query, parse_query};
use semprof::report::{export_json, render_static_report, session_charts};
use semprof::semantics::{compute_evidence, semantic_review, ErrorKind, PromptContext, SemProfile};
use semprof::statprofile::{
    compile_anchored, compute_quantiles, compute_value_frequency, detect_candidate_dmvs, profile_duplicates,
    profile_missing, profile_string, profile_uniqueness, DmvRule, Target, DEFAULT_COVERAGE, OTHER_BUCKET,
};

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn maiden_missing_fraction() -> Result<(), String> {
    let t = patient_table();
    let m = profile_missing(&t, &Target::column("Maiden")).map_err(|e| e.to_string())?;
    ensure!(m.null_count == PATIENT_MAIDEN_NULLS, "null_count {}", m.null_count);
    ensure!(m.missing_fraction == 0.817, "missing_fraction {}", m.missing_fraction);

    let mut s = Session::new(t, None, Settings::default());
    s.run(&MockProvider::new(MockScript::new()), Some(&StepFilter::new("stat/*")));
    let doc = export_json(&s, "mock").map_err(|e| e.to_string())?;
    let html = render_static_report(&doc, &session_charts(&s));
    ensure!(html.contains("81.7%"), "report does not show 81.7%");
    Ok(())
}

fn ssn_pattern() -> Result<(), String> {
    let t = patient_table();
    let s = profile_string(&t, "SSN", DEFAULT_COVERAGE).map_err(|e| e.to_string())?;
    ensure!(s.regex_pattern.as_deref() == Some(r"999-\d{2}-\d{4}"), "pattern {:?}", s.regex_pattern);
    ensure!(s.sample_outlier.is_empty(), "outliers {:?}", s.sample_outlier);
    let re = compile_anchored(r"999-\d{2}-\d{4}");
    let col = t.column("SSN").unwrap();
    ensure!(col.values().all(|v| re.is_match(&v.to_string())), "a value escapes the pattern");
    Ok(())
}

fn quantile_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a9);
    for i in 0..500 {
        let n = rng.random_range(1..=1000);
        let records: Vec<Vec<String>> = (0..n)
            .map(|_| {
                let v = if i % 2 == 0 {
                    rng.random_range(-1000i64..=1000).to_string()
                } else {
                    format!("{:?}", rng.random_range(-1.0e3..1.0e3))
                };
                vec![v]
            })
            .collect();
        let t = ColumnTable::from_raw("t", &["v".to_string()], &records).map_err(|e| e.to_string())?;
        let xs: Vec<f64> = (0..n).map(|r| t.value(r, 0).as_f64().unwrap()).collect();
        let got = compute_quantiles(&t, "v").map_err(|e| e.to_string())?.quantile;
        let want = oracle_quantiles(&xs);
        for k in 0..5 {
            ensure!(within(got[k], want[k], 1e-9), "column {i}: {got:?} vs {want:?}");
        }
    }
    let age = parse_csv("Age\n20\n-2\n90\n10\n-1\n50\n-2\n15\n5\n", "t", CsvOptions::default()).unwrap();
    let q = compute_quantiles(&age, "Age").map_err(|e| e.to_string())?.quantile;
    ensure!(q == [-2.0, -1.0, 10.0, 20.0, 90.0], "Age quantiles {q:?}");
    Ok(())
}

fn duplicate_frequency_uniqueness_oracles() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0b);
    for i in 0..200 {
        let raw = RawTable::up_to(&mut rng, 40, rng_domain(i), 0.2);
        let t = raw.table();

        let rows: Vec<Vec<String>> = (0..raw.rows()).map(|r| raw.cells(r)).collect();
        let ms = multiset(&rows);
        let groups = ms.iter().filter(|(_, n)| *n >= 2).count();
        let d = profile_duplicates(&t);
        ensure!(d.has_duplicate == (groups > 0), "table {i}: HasDuplicate");
        ensure!(d.sample_duplicate.len() == groups.min(5), "table {i}: sample size");
        let mut prev = usize::MAX;
        for g in &d.sample_duplicate {
            let cells: Vec<String> = g
                .row
                .values()
                .map(|v| match v {
                    Value::Null => String::new(),
                    Value::Float(x) => format!("{x:.2}"),
                    other => other.to_string(),
                })
                .collect();
            let want = ms.iter().find(|(k, _)| *k == cells).map(|(_, n)| *n);
            ensure!(want == Some(g.count) && g.count <= prev, "table {i}: duplicate group {cells:?}");
            prev = g.count;
        }

        for col in COLUMNS {
            let vals: Vec<String> = (0..raw.rows()).filter_map(|r| raw.text(col, r)).collect();
            let ms = multiset(&vals);
            let u = profile_uniqueness(&t, &Target::column(col)).map_err(|e| e.to_string())?;
            ensure!(u.unique_ratio == ms.len() as f64 / vals.len() as f64, "table {i} {col}: UniqueRatio");
            let repeated: HashSet<&String> = ms.iter().filter(|(_, n)| *n >= 2).map(|(k, _)| k).collect();
            ensure!(u.sample_non_unique.len() == repeated.len().min(5), "table {i} {col}: non-unique sample");
            if col == "x" {
                continue;
            }
            let cap = 3;
            let f = compute_value_frequency(&t, col, cap).map_err(|e| e.to_string())?.value_freq;
            ensure!(f.values().sum::<usize>() == vals.len(), "table {i} {col}: frequency total");
            for (k, n) in f.iter().filter(|(k, _)| *k != OTHER_BUCKET) {
                let want = ms.iter().find(|(v, _)| v == k).map(|(_, c)| *c);
                ensure!(want == Some(*n), "table {i} {col}: frequency of {k}");
            }
            ensure!(f.contains_key(OTHER_BUCKET) == (ms.len() > cap), "table {i} {col}: other bucket");
        }
    }
    Ok(())
}

fn rng_domain(i: usize) -> i64 {
    1 + (i % 4) as i64
}

fn dmv_sentinels() -> Result<(), String> {
    let mut csv = String::from("score,login\n");
    for i in 0..500 {
        let score = match i % 50 {
            0 => "-".to_string(),
            1 => "#Value!".to_string(),
            _ => format!("grade {}", i % 7),
        };
        let login = if i % 5 < 2 {
            "1970-01-01T00:00:00".to_string()
        } else {
            format!("2023-03-{:02}T{:02}:{:02}:{:02}", 1 + i % 28, i % 24, i % 60, (i / 60) % 60)
        };
        csv.push_str(&format!("{score},{login}\n"));
    }
    let t = parse_csv(&csv, "t", CsvOptions::default()).map_err(|e| e.to_string())?;
    let rules_of = |col: &str, value: &str| -> Option<Vec<DmvRule>> {
        let induced = profile_string(&t, col, DEFAULT_COVERAGE).ok();
        let d = detect_candidate_dmvs(&t, col, induced.as_ref()).ok()?;
        d.candidate_dmv.into_iter().find(|c| c.value.to_string() == value).map(|c| c.rules)
    };
    let dash = rules_of("score", "-").ok_or("\"-\" not flagged")?;
    ensure!(dash.contains(&DmvRule::Sentinel), "\"-\" rules {dash:?}");
    let value = rules_of("score", "#Value!").ok_or("\"#Value!\" not flagged")?;
    ensure!(value.contains(&DmvRule::Sentinel), "\"#Value!\" rules {value:?}");
    let epoch = rules_of("login", "1970-01-01T00:00:00").ok_or("epoch spike not flagged")?;
    ensure!(epoch == vec![DmvRule::Sentinel, DmvRule::Extreme], "epoch rules {epoch:?}");
    Ok(())
}

fn fenced(v: serde_json::Value) -> String {
    format!("```json\n{v}\n```")
}

fn validator_gauntlet() -> Result<(), String> {
    let t = parse_csv("alpha,beta,gamma\n1,x,2.5\n2,y,3.5\n", "t", CsvOptions::default()).unwrap();
    let good_summary = "Rows with <u>alpha</u>, <u>beta</u> and <u>gamma</u>.";
    let good_h = fenced(serde_json::json!({"T": {"G": ["alpha", "beta"], "H": ["gamma"]}}));

    // (a) summary missing an underline
    let mut script = MockScript::new();
    script.push(TABLE_SUMMARY_STEP, "Rows with <u>alpha</u>, <u>beta</u> and gamma.");
    script.push(TABLE_SUMMARY_STEP, good_summary);
    let rec = TranscriptRecorder::new(MockProvider::new(script));
    summarize_table(&t, None, &rec, 3).map_err(|e| e.to_string())?;
    let r = rec.records();
    ensure!(r.len() == 2, "(a) {} calls", r.len());
    ensure!(
        r[1].request.user.contains("these columns are not underlined with <u></u>: gamma"),
        "(a) retry lacks the diagnostic"
    );

    // (b) hierarchy omitting a column, (c) duplicating one
    let cases = [
        ("b", serde_json::json!({"T": {"G": ["alpha", "beta"]}}), "missing=[gamma]"),
        ("c", serde_json::json!({"T": {"G": ["alpha", "beta"], "H": ["gamma", "alpha"]}}), "duplicated=[alpha]"),
    ];
    for (tag, bad, needle) in cases {
        let mut script = MockScript::new();
        script.push(HIERARCHY_STEP, fenced(bad));
        script.push(HIERARCHY_STEP, good_h.clone());
        let rec = TranscriptRecorder::new(MockProvider::new(script));
        group_columns(&t, good_summary, &rec, 3).map_err(|e| e.to_string())?;
        let r = rec.records();
        ensure!(r.len() == 2, "({tag}) {} calls", r.len());
        ensure!(r[1].request.user.contains(needle), "({tag}) retry lacks \"{needle}\"");
    }

    // four bad answers in a row
    let mut script = MockScript::new();
    for _ in 0..4 {
        script.push(TABLE_SUMMARY_STEP, "No underlines at all.");
    }
    let p = MockProvider::new(script);
    match summarize_table(&t, None, &p, 3) {
        Err(ContextError::Llm(LlmError::ValidationExhausted { diagnostics, .. })) => {
            ensure!(diagnostics.len() == 4, "{} diagnostics", diagnostics.len());
            ensure!(diagnostics.iter().all(|d| d.contains("alpha, beta, gamma")), "diagnostics {diagnostics:?}");
        }
        other => return Err(format!("expected ValidationExhausted, got {other:?}")),
    }
    ensure!(p.call_count() == 4, "{} calls", p.call_count());
    Ok(())
}

fn end_to_end() -> Result<(), String> {
    let mut exports = Vec::new();
    for _ in 0..3 {
        let mut s = Session::new(patient_table(), None, Settings::default());
        let report = s.run(&MockProvider::new(patient_script()), None);
        ensure!(report.is_complete() && s.all_done(), "run incomplete: {:?}", report.failures);
        let doc = serde_json::to_value(export_json(&s, "mock").map_err(|e| e.to_string())?).unwrap();
        let keys: Vec<&str> = doc.as_object().unwrap().keys().map(String::as_str).collect();
        ensure!(
            keys[..4] == ["Semantic Context", "Statistical Profile", "Semantic Profile", "Semantic Review"],
            "sections {keys:?}"
        );
        let ctx: Vec<&str> = doc["Semantic Context"].as_object().unwrap().keys().map(String::as_str).collect();
        ensure!(ctx == ["Table Summary", "Attribute Hierarchy", "Column Summary"], "context keys {ctx:?}");
        ensure!(doc["Statistical Profile"]["Maiden"]["MissingValue"]["MissingFraction"] == 0.817, "Maiden stat");
        ensure!(doc["Semantic Review"]["SSN"]["StringOutlier"]["is_error"] == true, "SSN verdict");
        ensure!(doc["Semantic Review"]["Maiden"]["MissingValue"]["is_error"] == false, "Maiden verdict");
        ensure!(doc["Meta"]["Rows"] == PATIENT_ROWS, "Meta rows");
        exports.push(export_json(&s, "mock").unwrap().to_json_string());
    }
    ensure!(exports[0] == exports[1] && exports[1] == exports[2], "exports differ between runs");
    Ok(())
}

fn gate_property() -> Result<(), String> {
    let t = parse_csv("k,v\n1,a\n2,b\n3,c\n4,d\n5,e\n6,f\n", "t", CsvOptions::default()).unwrap();
    let summaries: IndexMap<String, String> =
        [("k", "Key."), ("v", "Value.")].map(|(a, b)| (a.to_string(), b.to_string())).into_iter().collect();
    let ctx = PromptContext {
        table_summary: "A table of <u>k</u> and <u>v</u>.",
        column_summaries: &summaries,
    };
    let cases = [
        (ErrorKind::Duplication, Target::Table, serde_json::json!(false)),
        (ErrorKind::UniqueKey, Target::column("k"), serde_json::json!(true)),
        (ErrorKind::MissingValue, Target::column("k"), serde_json::json!(false)),
        (ErrorKind::Dmv, Target::column("k"), serde_json::json!([-1, 9999])),
    ];
    for (kind, target, exp) in cases {
        let ev = compute_evidence(kind, &target, &t, DEFAULT_COVERAGE).map_err(|e| e.to_string())?;
        let p = ev.to_payload();
        let quiet = match kind {
            ErrorKind::Duplication => p["HasDuplicate"] == false,
            ErrorKind::UniqueKey => p["UniqueRatio"] == 1.0,
            ErrorKind::MissingValue => p["MissingFraction"] == 0.0,
            _ => p["CandidateDMV"] == serde_json::json!([]),
        };
        ensure!(quiet, "{kind:?} evidence is not quiet: {p}");
        let mut m = serde_json::Map::new();
        m.insert("Thought".into(), "t".into());
        m.insert(kind.expectation_key().into(), exp);
        let sem = SemProfile::from_payload(kind, &m)?;
        let llm = MockProvider::new(MockScript::new());
        let v = semantic_review("gate", &target, &ev, &sem, ctx, &llm, 3).map_err(|e| e.to_string())?;
        ensure!(llm.call_count() == 0, "{kind:?} called the model");
        ensure!(!v.is_error, "{kind:?} flagged an error");
    }
    Ok(())
}

fn invalidation() -> Result<(), String> {
    let llm = MockProvider::new(patient_script_with(2));
    let mut s = Session::new(patient_table(), None, Settings::default());
    ensure!(s.run(&llm, None).is_complete(), "first run incomplete");
    let summary = s.table_summary().unwrap().replace("records", "files");
    s.apply_context_edit(&ContextEdit::TableSummary(summary)).map_err(|e| e.to_string())?;
    let mut stale = HashSet::new();
    for (id, st) in s.steps() {
        let semantic = matches!(id.phase, Phase::Classify | Phase::Sem | Phase::Review);
        ensure!((st.status == StepStatus::Stale) == semantic, "{id} is {:?}", st.status);
        if semantic {
            stale.insert(id.clone());
        }
    }
    let before = llm.call_count();
    let report = s.run(&llm, None);
    let executed: HashSet<StepId> = report.executed.iter().cloned().collect();
    ensure!(executed == stale, "re-ran {} steps, {} were stale", executed.len(), stale.len());
    let ungated = s.done_verdicts().iter().filter(|(_, v)| !v.gated).count();
    let expected_calls = stale.iter().filter(|id| id.phase != Phase::Review).count() + ungated;
    ensure!(llm.call_count() - before == expected_calls, "{} calls, expected {expected_calls}", llm.call_count() - before);
    Ok(())
}

fn query_language() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1);
    for i in 0..200 {
        let raw = RawTable::up_to(&mut rng, 60, 4, 0.2);
        let t = raw.table();
        let q = random_query(&mut rng);
        let text = q.to_string();
        ensure!(parse_query(&text).as_ref() == Ok(&q), "query {i} does not round-trip: {text}");
        let r = execute_query(&q, &t).map_err(|e| format!("{text}: {e}"))?;
        ensure!(r.row_indices == oracle_rows(&q, &raw), "query {i} disagrees with the oracle: {text}");
    }
    Ok(())
}

fn main() {
    let checks: [(&str, Check, u64); 10] = [
        ("maiden missing fraction is 0.817 and renders as 81.7%", maiden_missing_fraction, 1_000),
        ("SSN pattern is 999-\\d{2}-\\d{4} with no outliers", ssn_pattern, 1_000),
        ("quantiles match the sort-and-interpolate oracle", quantile_oracle, 5_000),
        ("duplicates, frequencies and uniqueness match brute force", duplicate_frequency_uniqueness_oracles, 10_000),
        ("placeholder and epoch-spike DMVs carry the right rules", dmv_sentinels, 1_000),
        ("validator retries name the offending column", validator_gauntlet, 1_000),
        ("mock run completes with stable, correct export", end_to_end, 5_000),
        ("quiet evidence skips the model and is not an error", gate_property, 1_000),
        ("summary edit re-runs exactly the stale set", invalidation, 5_000),
        ("queries match a row-filter oracle and round-trip", query_language, 5_000),
    ];
    let mut failed = 0;
    for (name, check, limit_ms) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|()| {
            if elapsed > Duration::from_millis(limit_ms) {
                Err(format!("took {elapsed:?}, limit {limit_ms} ms"))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS  {name}  ({} ms, limit {limit_ms} ms)", elapsed.as_millis()),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}  ({} ms): {e}", elapsed.as_millis());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
