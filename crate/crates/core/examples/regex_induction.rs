//! Induce a pattern that covers most values and list what it misses.

use semprof::statprofile::{compile_anchored, induce_regex_pattern, DEFAULT_COVERAGE};

fn main() {
    let mut phones: Vec<String> = (0..40).map(|i| format!("({:03}) 555-{:04}", 200 + i, i * 7)).collect();
    phones.extend(["555 0101", "n/a"].map(String::from));

    let s = induce_regex_pattern(&phones, DEFAULT_COVERAGE);
    let pattern = s.regex_pattern.as_deref().expect("a pattern covers 90%");
    println!("pattern:  {pattern}");
    println!("outliers: {:?}", s.sample_outlier);
    println!("inliers:  {:?}", s.sample_inlier);

    let re = compile_anchored(pattern);
    let covered = phones.iter().filter(|p| re.is_match(p)).count();
    println!("coverage: {covered}/{}", phones.len());

    let ssn: Vec<String> = (0..100).map(|i| format!("999-{:02}-{:04}", i % 90 + 10, i * 97)).collect();
    println!("\nssn pattern: {:?}", induce_regex_pattern(&ssn, DEFAULT_COVERAGE).regex_pattern);
}
