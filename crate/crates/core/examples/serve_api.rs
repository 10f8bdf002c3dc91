//! Start the HTTP API on a local port and drive it as the review UI would.

use std::sync::Arc;

use semprof::fixtures::{patient_script, write_patient_csv};
use semprof::llm::MockProvider;
use semprof::pipeline::Settings;
use semprof::service::{router, AppState};
use serde_json::{json, Value};

fn call(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = match (method, body) {
        ("GET", _) => agent.get(url).call(),
        ("PUT", Some(b)) => agent.put(url).send_json(&b),
        (_, Some(b)) => agent.post(url).send_json(&b),
        (_, None) => agent.post(url).send_empty(),
    }
    .expect("request");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join("semprof-serve-example");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("patients.csv");
    write_patient_csv(&csv)?;

    let state = AppState::new(Arc::new(MockProvider::new(patient_script())), Settings::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(state, None)).await });

    tokio::task::spawn_blocking(move || {
        let (_, v) = call("POST", &format!("{base}/sessions"), Some(json!({"source": csv, "table": "patients"})));
        let s = format!("{base}/sessions/{}", v["session_id"].as_str().unwrap());
        let (_, r) = call("POST", &format!("{s}/run"), Some(json!({"wait": true})));
        println!("run: {} executed, {} failures", r["executed"].as_array().unwrap().len(), r["failures"]);

        let (_, v) = call("GET", &s, None);
        println!("alerts: {}", v["alert_counts"]);
        let (code, v) = call("POST", &format!("{s}/query"), Some(json!({"q": "SELECT * LIMIT 5"})));
        println!("query {code}: {} rows", v["rows"].as_array().unwrap().len());
        let (code, v) = call("POST", &format!("{s}/query"), Some(json!({"q": "SELEC *"})));
        println!("query {code}: {v}");
        let (code, v) = call(
            "PUT",
            &format!("{s}/context"),
            Some(json!({"part": "table_summary", "value": "Patients without underlines."})),
        );
        println!("context {code}: {v}");
        let (code, v) = call(
            "PUT",
            &format!("{s}/verdicts/review/StringOutlier/SSN"),
            Some(json!({"is_error": true, "note": "area 999 is invalid"})),
        );
        println!("verdict {code}: {}", v["verdict"]["status"]);
        let (_, v) = call("GET", &format!("{s}/charts"), None);
        let kinds: Vec<&str> = v.as_array().unwrap().iter().filter_map(|c| c["kind"].as_str()).collect();
        println!("charts: {kinds:?}");
    })
    .await
    .expect("client");
    Ok(())
}
