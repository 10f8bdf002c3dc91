//! Human feedback: override a verdict, edit the context and re-run only
//! what became stale.

use semprof::context::ContextEdit;
use semprof::fixtures::{patient_script_with, patient_table};
use semprof::llm::MockProvider;
use semprof::pipeline::{Session, Settings, StepId, StepStatus};
use semprof::semantics::ErrorKind;
use semprof::statprofile::Target;

fn main() {
    let llm = MockProvider::new(patient_script_with(2));
    let mut s = Session::new(patient_table(), None, Settings::default());
    s.run(&llm, None);

    let ssn = StepId::review(ErrorKind::StringOutlier, &Target::column("SSN"));
    s.apply_verdict_override(&ssn, true, "confirmed with the data owner").unwrap();
    println!("{ssn}: {}", serde_json::to_string(&s.verdict(&ssn).unwrap().to_payload()).unwrap());

    let before = llm.call_count();
    let summary = s.table_summary().unwrap().replace("patients", "hospital patients");
    let stale = s.apply_context_edit(&ContextEdit::TableSummary(summary)).unwrap();
    let stat_stale = stale.iter().filter(|id| s.status(id) == Some(StepStatus::Stale) && id.to_string().starts_with("stat/")).count();
    println!("edit invalidated {} steps ({stat_stale} statistical)", stale.len());
    let report = s.run(&llm, None);
    println!("re-ran {} steps with {} model calls", report.executed.len(), llm.call_count() - before);
}
