use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

use opiaid_cli::{Manifest, MANIFEST};
use opiaid_core::io::{read_bytes, read_json, sha256_hex};

fn opiaid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opiaid"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Value {
    let out = opiaid(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn hashes(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "run.log")
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            (rel, sha256_hex(&read_bytes(&p).unwrap()))
        })
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

const CASE: &str = r#"{"age":55,"weight":80.0,"sex":"female","asa_class":2,"surgery_duration":120.0,"surgery_type":0,"chronic_opioid_use":false,"comorbidity_score":1.5}"#;

#[test]
fn generate_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    ok(&["generate", "--n", "100", "--seed", "4", "--out", "a"], d.path());
    ok(&["generate", "--n", "100", "--seed", "4", "--out", "b"], d.path());
    let (a, b) = (hashes(&d.path().join("a")), hashes(&d.path().join("b")));
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert!(d.path().join("a/run.log").exists());
    ok(&["generate", "--n", "100", "--seed", "5", "--out", "c"], d.path());
    assert_ne!(a, hashes(&d.path().join("c")));
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let d = tempfile::tempdir().unwrap();
    let zero = opiaid(&["generate", "--n", "0", "--out", "x"], d.path());
    assert_eq!(zero.status.code(), Some(2));
    assert_eq!(opiaid(&["generate", "--bogus"], d.path()).status.code(), Some(2));
    assert_eq!(opiaid(&["train", "--cohort", "c", "--out", "m", "--learners", "xgb"], d.path()).status.code(), Some(2));

    let missing = opiaid(&["generate", "--scm", "nowhere/scm.json", "--n", "10", "--out", "x"], d.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere/scm.json"));
    assert_eq!(opiaid(&["diagnose", "--cohort", "absent"], d.path()).status.code(), Some(1));

    std::fs::write(d.path().join("bad.json"), "{\"seed\": 1}").unwrap();
    let bad = opiaid(&["generate", "--scm", "bad.json", "--n", "10", "--out", "x"], d.path());
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn full_pipeline_at_desk_scale() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let start = Instant::now();
    ok(&["generate", "--n", "2000", "--seed", "3", "--out", "cohort"], p);
    ok(&["train", "--cohort", "cohort", "--out", "models"], p);
    let eval = ok(&["evaluate", "--cohort", "cohort", "--models", "models", "--out", "eval"], p);
    assert!(start.elapsed() < Duration::from_secs(300), "{:?}", start.elapsed());

    let carried = eval["carried_forward"].as_array().unwrap();
    assert_eq!(carried.len(), 2);
    let ids: Vec<&str> = eval["reports"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    for id in ["rule_based", "proxy_marker", "causal_ml:selected", "causal_ml:mlp"] {
        assert!(ids.contains(&id), "{id}");
    }
    assert_eq!(ids.len(), 8 + 1 + 2);
    assert!(p.join("eval/method_reports.csv").exists());
    assert!(p.join("models/loss_curves/gradient_boosted_trees.pain.csv").exists());

    let trained: Manifest = read_json(&p.join("models").join(MANIFEST)).unwrap();
    assert_eq!(trained.retention_used, Some(true));
    let again = opiaid(&["evaluate", "--cohort", "cohort", "--models", "models", "--out", "eval2"], p);
    assert_eq!(again.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already been evaluated"));

    let model = "models/models/selected.json";
    let r = ok(&["recommend", "--model", model, "--case", CASE, "--weights", "0,1"], p);
    assert_eq!(r["dose_meq"], 0.0);
    let r = ok(&["recommend", "--model", model, "--case", CASE], p);
    assert!(r["dose_meq"].as_f64().unwrap() > 0.0);

    let minor = CASE.replace("\"age\":55", "\"age\":17");
    let rejected = opiaid(&["recommend", "--model", model, "--case", &minor], p);
    assert_eq!(rejected.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&rejected.stderr).contains("age"));

    ok(&["curves", "--model", model, "--case", CASE, "--out", "curve.csv"], p);
    let csv = String::from_utf8(read_bytes(&p.join("curve.csv")).unwrap()).unwrap();
    assert_eq!(csv.lines().count(), 42);

    let overlap = ok(&["diagnose", "--cohort", "cohort"], p);
    let total: u64 = overlap["cells"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 2000);
}

#[test]
fn reruns_from_the_same_inputs_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["generate", "--n", "400", "--noiseless", "--out", "cohort"], p);
    for run in ["a", "b"] {
        let models = format!("{run}/models");
        let eval = format!("{run}/eval");
        ok(&["train", "--cohort", "cohort", "--learners", "knn,decision_tree", "--out", &models], p);
        ok(
            &["evaluate", "--cohort", "cohort", "--models", &models, "--out", &eval, "--include-oracle"],
            p,
        );
    }
    let (a, b) = (hashes(&p.join("a")), hashes(&p.join("b")));
    assert_eq!(a, b);
    assert!(a.iter().any(|(f, _)| f == "eval/evaluation.json"));

    ok(&["generate", "--n", "400", "--seed", "9", "--out", "other"], p);
    let mismatch = opiaid(&["evaluate", "--cohort", "other", "--models", "b/models", "--out", "x"], p);
    assert_eq!(mismatch.status.code(), Some(3));
}

#[test]
fn config_file_overrides_flags() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&["generate", "--n", "300", "--out", "cohort"], p);
    std::fs::write(p.join("cfg.json"), r#"{"families": ["knn"], "learner_seed": 5, "tune": false}"#).unwrap();
    let out = ok(
        &["train", "--cohort", "cohort", "--learners", "mlp", "--seed", "1", "--config", "cfg.json", "--out", "m"],
        p,
    );
    assert_eq!(out["models"].as_array().unwrap().len(), 2);
    let m: Manifest = read_json(&p.join("m").join(MANIFEST)).unwrap();
    assert_eq!(m.parameters["families"], serde_json::json!(["knn"]));
    assert_eq!(m.parameters["learner_seed"], 5);
    assert_eq!(m.parameters["n"], 300);
    assert!(m.inputs.contains_key("config"));

    std::fs::write(p.join("typo.json"), r#"{"familes": ["knn"]}"#).unwrap();
    let typo = opiaid(&["train", "--cohort", "cohort", "--config", "typo.json", "--out", "t"], p);
    assert_eq!(typo.status.code(), Some(3));
}
