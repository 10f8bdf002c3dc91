//! Record every model exchange of a run, then replay the transcript for a
//! byte-identical profile without any model.

use std::sync::Arc;

use semprof::fixtures::{patient_script, patient_table};
use semprof::llm::{MockProvider, ReplayProvider, TranscriptRecorder};
use semprof::pipeline::{Session, Settings};
use semprof::report::export_json;

fn main() -> std::io::Result<()> {
    let recorder = TranscriptRecorder::new(Arc::new(MockProvider::new(patient_script())));
    let mut first = Session::new(patient_table(), None, Settings::default());
    first.run(&recorder, None);
    let path = std::env::temp_dir().join("semprof-transcript.json");
    recorder.save(&path)?;
    println!("recorded {} exchanges to {}", recorder.records().len(), path.display());

    let replay = ReplayProvider::load(&path).expect("transcript loads");
    let mut second = Session::new(patient_table(), None, Settings::default());
    second.run(&replay, None);

    let a = export_json(&first, "mock").unwrap().to_json_string();
    let b = export_json(&second, "mock").unwrap().to_json_string();
    println!("identical profiles: {}", a == b);
    Ok(())
}
