use opiaid_core::cadr::{cadr_curve, fit_cadr, CadrConfig, EndpointSpec};
use opiaid_core::diagnostics::DiagnosticsContext;
use opiaid_core::domain::{DoseGrid, OradeWeights, PainTimepoint, Treatment, UtilityWeights};
use opiaid_core::io::*;
use opiaid_core::synthgen::{generate_cohort, reference_case, ScmGroundTruth};
use opiaid_learners::{Family, LearnerKind};

fn small_bundle() -> ModelBundle {
    let gt = ScmGroundTruth::default();
    let c = generate_cohort(&gt, 200).unwrap();
    let spec = EndpointSpec::new(LearnerKind::regression(Family::RandomForest));
    let cfg = CadrConfig {
        pain: spec.clone(),
        orade: spec,
        grid: DoseGrid::default(),
        seed: 1,
        pain_target: PainTimepoint::Arrival,
        orade_weights: OradeWeights::default(),
        registry: gt.registry.clone(),
        n_surgery_types: gt.n_surgery_types(),
    };
    ModelBundle::new("causal_ml:random_forest", fit_cadr(&c.records, &cfg).unwrap(), DiagnosticsContext::default())
}

#[test]
fn cohort_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_cohort(&ScmGroundTruth::default().with_seed(2), 400).unwrap();
    write_cohort(dir.path(), &c).unwrap();
    let back = read_cohort(dir.path()).unwrap();
    assert_eq!(back, c);

    let first = read_bytes(&dir.path().join(COHORT_CSV)).unwrap();
    let again = tempfile::tempdir().unwrap();
    write_cohort(again.path(), &back).unwrap();
    for f in [COHORT_CSV, COHORT_SCHEMA, GROUND_TRUTH] {
        assert_eq!(
            read_bytes(&dir.path().join(f)).unwrap(),
            read_bytes(&again.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let header = String::from_utf8(first).unwrap();
    assert_eq!(header.lines().next().unwrap(), COHORT_HEADER.join(","));
}

#[test]
fn tampered_cohorts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_cohort(&ScmGroundTruth::default(), 50).unwrap();
    write_cohort(dir.path(), &c).unwrap();
    let csv = dir.path().join(COHORT_CSV);
    let text = String::from_utf8(read_bytes(&csv).unwrap()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    write_atomic(&csv, (lines.join("\n") + "\n").as_bytes()).unwrap();
    assert!(read_cohort(dir.path()).is_err());

    let missing = tempfile::tempdir().unwrap();
    assert!(matches!(read_cohort(missing.path()), Err(opiaid_core::Error::Io { .. })));
}

#[test]
fn bundles_round_trip_bit_exactly() {
    let b = small_bundle();
    let bytes = b.to_bytes().unwrap();
    let back = ModelBundle::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let w = UtilityWeights::default();
    let x = reference_case();
    assert_eq!(
        cadr_curve(&back.cadr, &x, Treatment::MORPHINE, w).unwrap(),
        cadr_curve(&b.cadr, &x, Treatment::MORPHINE, w).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    write_atomic(&path, &bytes).unwrap();
    assert_eq!(read_bundle(&path).unwrap(), b);
}

#[test]
fn bundle_version_is_checked() {
    let text = String::from_utf8(small_bundle().to_bytes().unwrap()).unwrap();
    let newer = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert_ne!(newer, text);
    assert!(ModelBundle::from_bytes(newer.as_bytes()).is_err());
    assert!(ModelBundle::from_bytes(&text.as_bytes()[..text.len() / 2]).is_err());
}

#[test]
fn curve_csv_has_one_row_per_dose() {
    let b = small_bundle();
    let curve = cadr_curve(&b.cadr, &reference_case(), Treatment::MORPHINE, UtilityWeights::default()).unwrap();
    let text = String::from_utf8(curve_csv_bytes(&curve).unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dose,pain_hat,orade_hat,utility,spread");
    assert_eq!(lines.len(), 42);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn atomic_writes_leave_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nested").join("out.json");
    write_json(&p, &vec![1, 2, 3]).unwrap();
    write_json(&p, &vec![4]).unwrap();
    let v: Vec<i32> = read_json(&p).unwrap();
    assert_eq!(v, vec![4]);
    let names: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
    assert_eq!(names.len(), 1);
    assert_eq!(sha256_hex(b"abc").len(), 64);
}
