//! Run the whole pipeline on the patient fixture with a scripted model and
//! write the profile document, an HTML report, and the inputs for the CLI.
//!
//! ```text
//! cargo run --example full_pipeline -- out/
//! semprof profile --input out/patients.csv --table patients \
//!     --provider mock --mock-script out/script.json --out out/p.json
//! ```

use std::path::PathBuf;

use semprof::fixtures::{patient_script, patient_table, write_patient_csv};
use semprof::llm::MockProvider;
use semprof::pipeline::{Session, Settings};
use semprof::report::{export_json, render_static_report, session_charts};

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "profile-out".into()));
    std::fs::create_dir_all(&dir)?;

    let llm = MockProvider::new(patient_script());
    let mut session = Session::new(patient_table(), None, Settings::default());
    let report = session.run(&llm, None);
    println!(
        "{} steps executed, {} failed, {} model calls",
        report.executed.len(),
        report.failures.len(),
        llm.call_count()
    );
    for (node, n) in session.alert_counts() {
        println!("  {:<28} {n}", if node.is_empty() { "(table)" } else { &node });
    }

    let doc = export_json(&session, "mock").expect("steps finished");
    std::fs::write(dir.join("profile.json"), doc.to_json_string())?;
    std::fs::write(dir.join("report.html"), render_static_report(&doc, &session_charts(&session)))?;
    write_patient_csv(&dir.join("patients.csv"))?;
    std::fs::write(dir.join("script.json"), serde_json::to_string_pretty(&patient_script()).unwrap())?;
    println!("wrote {}", dir.display());
    Ok(())
}
