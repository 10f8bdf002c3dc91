//! Chart data for a few column kinds.

use semprof::fixtures::patient_table;
use semprof::report::build_chart_data;
use semprof::semantics::HigherOrderType;
use semprof::statprofile::Target;

fn main() {
    let t = patient_table();
    let cases = [
        (Target::column("Age"), None),
        (Target::column("Gender"), Some(HigherOrderType::Category)),
        (Target::Group(vec!["Lat".into(), "Lon".into()]), Some(HigherOrderType::LatLong)),
        (Target::column("SSN"), Some(HigherOrderType::FreeText)),
    ];
    for (target, hot) in cases {
        match build_chart_data(&t, &target, hot) {
            Ok(c) => {
                let v = serde_json::to_value(&c).unwrap();
                let s = v.to_string();
                println!("{target}: {}{}", &s[..s.len().min(160)], if s.len() > 160 { "..." } else { "" });
            }
            Err(e) => println!("{target}: {e}"),
        }
    }
}
