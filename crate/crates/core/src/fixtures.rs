//! A deterministic synthetic patient table and a mock script that profiles
//! it end to end. Used by the examples and tests; handy for trying the
//! service without a model.
//!
//! The table has 1000 rows and the columns `Id, BirthDate, SSN, First, Last,
//! Maiden, Gender, Age, Lat, Lon`. Every SSN starts with the invalid area
//! number 999 and 817 rows have no maiden name. The script flags the SSN
//! pattern as an error and accepts the missing maiden names.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use crate::context::{column_summary_call_id, HIERARCHY_STEP, TABLE_SUMMARY_STEP};
use crate::ingest::{write_csv, ColumnTable, CsvOptions};
use crate::llm::MockScript;
use crate::pipeline::StepId;
use crate::semantics::{applicable, ErrorKind};
use crate::statprofile::Target;

pub const PATIENT_ROWS: usize = 1000;
pub const PATIENT_MAIDEN_NULLS: usize = 817;
pub const PATIENT_COLUMNS: [&str; 10] = [
    "Id", "BirthDate", "SSN", "First", "Last", "Maiden", "Gender", "Age", "Lat", "Lon",
];

const FIRST: [&str; 24] = [
    "Alma", "Bert", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kira", "Luis",
    "Mara", "Nils", "Olga", "Pavel", "Quinn", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wade", "Yara",
];
const LAST: [&str; 20] = [
    "Abbott", "Baker", "Chen", "Dalton", "Engel", "Fischer", "Garcia", "Hughes", "Ivanov", "Jensen", "Klein",
    "Lopez", "Moreau", "Novak", "Okafor", "Price", "Quist", "Reyes", "Sato", "Turner",
];

/// The synthetic patient table as CSV text.
pub fn patient_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut has_maiden = vec![false; PATIENT_ROWS];
    for slot in has_maiden.iter_mut().take(PATIENT_ROWS - PATIENT_MAIDEN_NULLS) {
        *slot = true;
    }
    has_maiden.shuffle(&mut rng);

    let reference = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
    let mut out = PATIENT_COLUMNS.join(",");
    out.push('\n');
    for (i, maiden) in has_maiden.iter().enumerate() {
        let id = uuid::Builder::from_random_bytes(rng.random()).into_uuid();
        let age: i64 = rng.random_range(0..=109);
        let birth = reference - Duration::days(age * 365 + rng.random_range(1..365));
        let ssn = format!("999-{:02}-{:04}", i % 100, (i / 100) * 1000 + (i * 37) % 1000);
        let first = FIRST[rng.random_range(0..FIRST.len())];
        let last = LAST[rng.random_range(0..LAST.len())];
        let maiden = if *maiden { LAST[rng.random_range(0..LAST.len())] } else { "" };
        let gender = if rng.random_bool(0.5) { "F" } else { "M" };
        let lat = 42.0 + rng.random_range(0..700_000) as f64 / 1e6;
        let lon = -71.5 + rng.random_range(0..700_000) as f64 / 1e6;
        out.push_str(&format!(
            "{id},{},{ssn},{first},{last},{maiden},{gender},{age},{lat:.6},{lon:.6}\n",
            birth.format("%Y-%m-%d")
        ));
    }
    out
}

pub fn patient_table() -> ColumnTable {
    crate::ingest::parse_csv(&patient_csv(), "patients", CsvOptions::default()).expect("fixture parses")
}

/// Writes the fixture to `path`.
pub fn write_patient_csv(path: &std::path::Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(&patient_table(), file, CsvOptions::default()).map_err(std::io::Error::other)
}

pub fn patient_hierarchy() -> Json {
    json!({
        "Patient": {
            "Identification": ["Id", "SSN"],
            "Name": ["First", "Last", "Maiden"],
            "Demographics": ["BirthDate", "Gender", "Age"],
            "Location": ["Lat", "Lon"]
        }
    })
}

fn fenced(v: Json) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(&v).expect("serializes"))
}

fn column_summary(col: &str) -> &'static str {
    match col {
        "Id" => "UUID (Universally Unique Identifier).",
        "SSN" => "Social Security Number of the patient.",
        "First" => "First name of the patient.",
        "Last" => "Last name of the patient.",
        "Maiden" => "Maiden name of the patient, if any.",
        "BirthDate" => "Date of birth of the patient.",
        "Gender" => "Gender of the patient, M or F.",
        "Age" => "Age of the patient in years.",
        "Lat" => "Latitude of the patient's home address.",
        "Lon" => "Longitude of the patient's home address.",
        _ => "A column of the patient table.",
    }
}

fn expectation(kind: ErrorKind, target: &Target) -> (Json, &'static str) {
    let col = target.columns().first().copied().unwrap_or("");
    match kind {
        ErrorKind::Duplication => (json!(false), "Each row describes one patient, so no row should repeat."),
        ErrorKind::ColumnType => {
            let ty = match col {
                "BirthDate" => "date",
                "Age" => "integer",
                "Lat" | "Lon" => "float",
                _ => "string",
            };
            (json!(ty), "The column's meaning determines its type.")
        }
        ErrorKind::UniqueKey => (
            json!(matches!(col, "Id" | "SSN")),
            "Identifiers are unique per patient; other attributes may repeat.",
        ),
        ErrorKind::Dmv => (json!(["", "N/A", "unknown"]), "Placeholders could stand in for unknown values."),
        ErrorKind::MissingValue => (
            json!(col == "Maiden"),
            "Only married patients who changed their name have a maiden name.",
        ),
        ErrorKind::NumericOutlier => match col {
            "Age" => (json!([0, 20, 40, 60, 130]), "Human ages range from 0 to about 120."),
            "Lat" => (json!([41.0, 42.0, 42.3, 42.5, 43.0]), "Addresses lie in one region."),
            _ => (json!([-72.0, -71.5, -71.1, -70.9, -70.0]), "Addresses lie in one region."),
        },
        ErrorKind::StringOutlier => match col {
            "SSN" => (
                json!(["123-45-6789", "456-12-3456"]),
                "SSNs are three digits, two digits and four digits; area number 999 is never issued.",
            ),
            "Gender" => (json!(["M", "F"]), "Gender is coded as a single letter."),
            "Id" => (json!(["0b7c9d1e-4f2a-4e8b-9c3d-5a6b7c8d9e0f"]), "Ids are UUIDs."),
            _ => (json!(["Smith", "Garcia"]), "Names are capitalized words."),
        },
        ErrorKind::MissingRecord => match col {
            "Gender" => (json!({"M": 1, "F": 1}), "Both genders are about equally common."),
            _ => (json!({"Common names": 1}), "Names are spread over many values."),
        },
    }
}

fn review(kind: ErrorKind, target: &Target) -> (bool, &'static str) {
    match (kind, target.columns().first().copied().unwrap_or("")) {
        (ErrorKind::StringOutlier, "SSN") => (
            true,
            "Every SSN starts with 999, which is not a valid area number, so the entire column is erroneous.",
        ),
        (ErrorKind::MissingValue, "Maiden") => (
            false,
            "Missing maiden names are expected for patients who never changed their name; this is normal and does not require cleaning.",
        ),
        _ => (false, "The observed statistics agree with the expectation."),
    }
}

/// Columns and higher-order types the script assigns per leaf.
fn classification(leaf: &str) -> Json {
    match leaf {
        "Patient/Location" => json!({"Assignments": [{"columns": ["Lat", "Lon"], "type": "lat_long"}]}),
        "Patient/Demographics" => json!({"Assignments": [{"columns": ["Gender"], "type": "category"}]}),
        "Patient/Name" => json!({"Assignments": [
            {"columns": ["First"], "type": "category"},
            {"columns": ["Last"], "type": "category"},
            {"columns": ["Maiden"], "type": "category"}
        ]}),
        _ => json!({"Assignments": []}),
    }
}

/// Mock responses for every model call of a full run on [`patient_table`],
/// each repeated `repeats` times so a session can be re-run after edits.
pub fn patient_script_with(repeats: usize) -> MockScript {
    let table = patient_table();
    let hierarchy = crate::context::AttributeHierarchy::from_json(&patient_hierarchy()).expect("valid fixture");
    let mut script = MockScript::new();
    let mut push = |id: String, text: String| {
        for _ in 0..repeats {
            script.push(id.clone(), text.clone());
        }
    };

    let summary = format!(
        "The table contains medical and demographic records for patients: {}.",
        PATIENT_COLUMNS.iter().map(|c| format!("<u>{c}</u>")).collect::<Vec<_>>().join(", ")
    );
    push(TABLE_SUMMARY_STEP.into(), summary);
    push(
        HIERARCHY_STEP.into(),
        format!("Grouping by concept.\n{}", fenced(patient_hierarchy())),
    );

    let mut targets = vec![Target::Table];
    for leaf in hierarchy.leaves() {
        let summaries: serde_json::Map<String, Json> = leaf
            .columns
            .iter()
            .map(|c| (c.clone(), json!(column_summary(c))))
            .collect();
        push(column_summary_call_id(&leaf.path), fenced(Json::Object(summaries)));
        push(StepId::classify(&leaf.path).to_string(), fenced(classification(&leaf.path)));
        targets.extend(leaf.columns.iter().map(|c| Target::column(c.clone())));
    }
    targets.push(Target::Group(vec!["Lat".into(), "Lon".into()]));

    for target in &targets {
        for kind in ErrorKind::ALL {
            if !applicable(kind, target, &table) {
                continue;
            }
            let (exp, thought) = expectation(kind, target);
            let mut body = serde_json::Map::new();
            body.insert("Thought".into(), json!(thought));
            body.insert(kind.expectation_key().into(), exp);
            push(StepId::sem(kind, target).to_string(), fenced(Json::Object(body)));
            let (is_error, reasoning) = review(kind, target);
            push(
                StepId::review(kind, target).to_string(),
                fenced(json!({"reasoning": reasoning, "is_error": is_error})),
            );
        }
    }
    script
}

pub fn patient_script() -> MockScript {
    patient_script_with(1)
}
