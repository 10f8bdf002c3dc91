//! Statistical profile of every column: missing values, uniqueness,
//! quantiles, patterns and disguised missing values.

use semprof::fixtures::patient_table;
use semprof::semantics::{applicable, compute_evidence, ErrorKind};
use semprof::statprofile::{Target, DEFAULT_COVERAGE};

fn main() {
    let t = patient_table();
    let mut targets = vec![Target::Table];
    targets.extend(t.column_names().into_iter().map(Target::column));
    for target in &targets {
        println!("== {target}");
        for kind in ErrorKind::ALL {
            if !applicable(kind, target, &t) {
                continue;
            }
            let ev = compute_evidence(kind, target, &t, DEFAULT_COVERAGE).expect("applicable");
            println!("  {:<15} {}", kind.as_str(), serde_json::to_string(&ev.to_payload()).unwrap());
        }
    }
}
