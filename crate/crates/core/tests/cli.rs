mod common;

use std::fs;
use std::path::Path;

use common::{run_in, run_pipeline, PIPELINE_REPORTS};

fn schema(command: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{command}.schema.json"));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

#[test]
fn pipeline_reports_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), 200, 3, 2);
    let d = dir.path();
    fs::write(d.join("target.csv"), "1,2,3\n4,5,6\n").unwrap();
    let (code, err) = run_in(d, &["project", "--target", "target.csv", "--out", "z.csv", "--report", "project.json"]);
    assert_eq!(code, 0, "{err}");
    let mut reports: Vec<(&str, &str)> = PIPELINE_REPORTS.to_vec();
    reports.push(("project.json", "project"));
    for (file, command) in reports {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(file)).unwrap()).unwrap();
        let validator = schema(command);
        let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{file}: {errors:?}");
    }
}

#[test]
fn schemas_reject_malformed_reports() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), 120, 1, 1);
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("match.json")).unwrap()).unwrap();
    v["result"]["pairs"][0]["distance"] = serde_json::json!(-1.0);
    assert!(!schema("match").is_valid(&v));
    v["command"] = "balance".into();
    assert!(!schema("match").is_valid(&v));
}

#[test]
fn same_seed_same_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (x, y) = (run_pipeline(a.path(), 150, 7, 1), run_pipeline(b.path(), 150, 7, 1));
    let differing: Vec<(&String, &String, &String)> =
        x.keys().filter(|k| x[*k] != y[*k]).map(|k| (k, &x[k], &y[k])).collect();
    assert!(differing.is_empty(), "{differing:#?}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, err) = run_in(d, &["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.to_lowercase().contains("usage"), "{err}");
    assert_eq!(run_in(d, &[]).0, 1);
    assert_eq!(run_in(d, &["match", "--manifest", "m.csv", "--out", "o.json", "--bogus"]).0, 1);
    assert_eq!(run_in(d, &["--help"]).0, 0);
    assert_eq!(run_in(d, &["--version"]).0, 0);
    // unreadable input is an I/O failure
    assert_eq!(run_in(d, &["match", "--manifest", "missing.csv", "--out", "o.json"]).0, 2);
    // a readable but invalid input is a validation failure
    fs::write(d.join("bad.csv"), "not,a,manifest\n").unwrap();
    assert_eq!(run_in(d, &["match", "--manifest", "bad.csv", "--out", "o.json"]).0, 1);
    fs::write(d.join("cfg.json"), "{\"n\": 10, \"nn\": 3}").unwrap();
    assert_eq!(run_in(d, &["synth", "--config", "cfg.json", "--out-dir", "x"]).0, 1);
    assert!(!d.join("o.json").exists());
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), "{\"n\": 40, \"seed\": 1}").unwrap();
    for (out, seed) in [("a", "1"), ("b", "2"), ("c", "1")] {
        assert_eq!(run_in(d, &["--seed", seed, "synth", "--config", "c.json", "--out-dir", out]).0, 0);
    }
    let read = |p: &str| fs::read_to_string(d.join(p).join("latents.csv")).unwrap();
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("b"));
}
