//! Load a CSV, inspect the inferred schema and run read-only queries.

use semprof::fixtures::patient_table;
use semprof::query::{parse_query, run_query};

fn main() {
    let t = patient_table();
    for c in t.schema() {
        println!("{:>2} {:<10} {}", c.ordinal, c.name, c.ptype);
    }

    let q = "SELECT First, Last, Age WHERE Maiden IS NULL AND Age >= 100 LIMIT 5";
    println!("\n{}", parse_query(q).expect("valid query"));
    let r = run_query(q, &t).expect("query runs");
    println!("{}", r.columns.join(" | "));
    for row in &r.rows {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        println!("{}", cells.join(" | "));
    }

    // Errors carry a character offset for the query box.
    let err = run_query("SELEC *", &t).unwrap_err();
    println!("\n{}", serde_json::to_string(&err.to_wire()).unwrap());
}
