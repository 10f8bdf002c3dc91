//! Build the semantic context (table summary, concept hierarchy, column
//! summaries) with a scripted model, then apply a user edit.

use semprof::context::{apply_user_edit, group_columns, summarize_columns, summarize_table, ContextEdit, SemanticContext};
use semprof::fixtures::{patient_script, patient_table};
use semprof::llm::MockProvider;

fn main() {
    let t = patient_table();
    let llm = MockProvider::new(patient_script());
    let summary = summarize_table(&t, None, &llm, 3).expect("summary");
    let hierarchy = group_columns(&t, &summary, &llm, 3).expect("hierarchy");
    let column_summaries = summarize_columns(&t, &summary, &hierarchy, &llm, 3).expect("column summaries");
    let ctx = SemanticContext {
        table_summary: summary,
        hierarchy,
        column_summaries,
        docs: None,
    };
    println!("{}", serde_json::to_string_pretty(&ctx).unwrap());

    // Edits pass the same validators as model output.
    let names = t.column_names();
    let bad = ContextEdit::TableSummary("Patients and their <u>SSN</u>.".into());
    match apply_user_edit(&ctx, &bad, &names) {
        Ok(_) => unreachable!(),
        Err(e) => println!("\nrejected: {e}"),
    }
    println!("model calls: {}", llm.call_count());
}
