use std::path::Path;
use std::process::{Command, Output};

use semprof::fixtures::{patient_script, write_patient_csv, PATIENT_ROWS};

fn semprof(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semprof"))
        .current_dir(dir)
        .env_remove("COCOON_LLM_API_KEY")
        .args(args)
        .output()
        .unwrap()
}

fn setup(script: semprof::llm::MockScript) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_patient_csv(&dir.path().join("patients.csv")).unwrap();
    std::fs::write(dir.path().join("s.json"), serde_json::to_string(&script).unwrap()).unwrap();
    dir
}

const PROFILE: [&str; 9] = [
    "profile", "--input", "patients.csv", "--table", "patients", "--provider", "mock", "--mock-script", "s.json",
];

#[test]
fn full_profile_exits_zero() {
    let dir = setup(patient_script());
    let mut args = PROFILE.to_vec();
    args.extend(["--out", "p.json", "--report", "r.html"]);
    let out = semprof(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(doc["Meta"]["Rows"], PATIENT_ROWS);
    assert_eq!(doc["Meta"]["Provider"], "mock");
    assert_eq!(doc["Semantic Review"]["SSN"]["StringOutlier"]["is_error"], true);
    let html = std::fs::read_to_string(dir.path().join("r.html")).unwrap();
    assert!(html.contains("81.7%"));
}

#[test]
fn missing_input_exits_one() {
    let dir = setup(patient_script());
    let mut args = PROFILE.to_vec();
    args[2] = "absent.csv";
    let out = semprof(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cannot read absent.csv"), "{err}");
}

#[test]
fn incomplete_script_exits_two_with_marker() {
    let mut script = patient_script();
    script.0.shift_remove("review/StringOutlier/SSN");
    let dir = setup(script);
    let mut args = PROFILE.to_vec();
    args.extend(["--out", "p.json"]);
    let out = semprof(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(doc["Semantic Review"]["SSN"]["StringOutlier"]["Status"], "failed");
    assert!(String::from_utf8_lossy(&out.stderr).contains("review/StringOutlier/SSN"));
}

#[test]
fn live_without_key_and_mock_without_script_are_fatal() {
    let dir = setup(patient_script());
    let out = semprof(dir.path(), &["profile", "--input", "patients.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("COCOON_LLM_API_KEY"));
    let out = semprof(dir.path(), &["profile", "--input", "patients.csv", "--provider", "mock"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn record_then_replay_gives_same_profile() {
    let dir = setup(patient_script());
    let mut args = PROFILE.to_vec();
    args.extend(["--out", "a.json", "--record", "t.json"]);
    assert_eq!(semprof(dir.path(), &args).status.code(), Some(0));
    let replay = [
        "profile", "--input", "patients.csv", "--table", "patients", "--provider", "replay", "--transcript", "t.json",
        "--out", "b.json",
    ];
    let out = semprof(dir.path(), &replay);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let read = |f: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(f)).unwrap()).unwrap()
    };
    let (mut a, mut b) = (read("a.json"), read("b.json"));
    a["Meta"]["Provider"] = serde_json::Value::Null;
    b["Meta"]["Provider"] = serde_json::Value::Null;
    assert_eq!(a, b);
}
