use opiaid_core::domain::{DoseGrid, DoseMeq, Treatment, UtilityWeights};
use opiaid_core::synthgen::*;
use opiaid_core::Error;
use proptest::prelude::*;

const T: Treatment = Treatment::MORPHINE;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn features_are_seed_deterministic() {
    let gt = ScmGroundTruth::default();
    assert_eq!(sample_features(&gt, 3, 7).unwrap(), sample_features(&gt, 3, 7).unwrap());
    assert_ne!(sample_features(&gt, 3, 7).unwrap(), sample_features(&gt, 3, 8).unwrap());
}

#[test]
fn ages_respect_the_adult_floor() {
    let xs = sample_features(&ScmGroundTruth::default(), 1000, 1).unwrap();
    assert!(xs.iter().all(|x| x.age >= 18));
    let k = ScmGroundTruth::default().n_surgery_types();
    for x in &xs {
        x.validate(k).unwrap();
    }
}

#[test]
fn empty_requests_are_rejected() {
    let gt = ScmGroundTruth::default();
    assert!(matches!(sample_features(&gt, 0, 1), Err(Error::TooSmall { .. })));
    assert!(matches!(generate_cohort(&gt, 0), Err(Error::TooSmall { .. })));
}

#[test]
fn constant_policy_gives_its_intercept() {
    let mut gt = ScmGroundTruth::default();
    gt.policy.coefficients = Affine::constant(8.0, f64::MIN, f64::MAX);
    for x in sample_features(&gt, 50, 3).unwrap() {
        assert_eq!(assign_observational_dose(&gt, &x, 0.0), DoseMeq(8.0));
    }
}

#[test]
fn huge_noise_clamps_to_the_maximum() {
    let gt = ScmGroundTruth::default();
    let x = reference_case();
    assert_eq!(assign_observational_dose(&gt, &x, 1000.0), DoseMeq(gt.max_dose));
    assert_eq!(assign_observational_dose(&gt, &x, -1000.0), DoseMeq(0.0));
}

#[test]
fn heavier_patients_get_more_opioid() {
    let c = generate_cohort(&ScmGroundTruth::default(), 10_000).unwrap();
    let dose: Vec<f64> = c.records.iter().map(|r| r.administered_dose).collect();
    let weight: Vec<f64> = c.records.iter().map(|r| r.features.weight).collect();
    assert!(pearson(&dose, &weight) > 0.0);
}

#[test]
fn closed_form_examples() {
    let gt = ScmGroundTruth::default();
    let x = reference_case();
    let p = gt.case_parameters(&x);
    assert_eq!(true_pain_response(&gt, T, DoseMeq(0.0), &x), p.p0);
    assert_eq!(true_pain_response(&gt, T, DoseMeq(p.ed50), &x), p.p0 / 2.0);
    assert_eq!(true_pain_response(&gt, T, DoseMeq(15.0), &x), 2.0);
    assert_eq!(true_orade_response(&gt, T, DoseMeq(0.0), &x), 0.0);
    assert_eq!(true_orade_response(&gt, T, DoseMeq(p.od50), &x), p.s_max / 2.0);
    assert_eq!(true_orade_response(&gt, T, DoseMeq(20.0), &x), 4.8);
}

#[test]
fn los_is_linear_when_noiseless() {
    let gt = ScmGroundTruth::default().noiseless();
    assert_eq!(pacu_los(&gt, 4.0, 2.0, 0.0), 60.0);
}

#[test]
fn low_doses_leave_more_pain() {
    let c = generate_cohort(&ScmGroundTruth::default(), 20_000).unwrap();
    let mean_in = |lo: f64, hi: f64| {
        let v: Vec<f64> = c
            .records
            .iter()
            .filter(|r| r.administered_dose >= lo && r.administered_dose < hi)
            .map(|r| r.pain_arrival.nrs() as f64)
            .collect();
        assert!(v.len() > 30, "too few cases in [{lo}, {hi})");
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_in(0.0, 2.0) > mean_in(10.0, 12.0));
}

#[test]
fn oracle_boundaries_and_reference_optimum() {
    let gt = ScmGroundTruth::default();
    let grid = DoseGrid::default();
    for x in sample_features(&gt, 200, 11).unwrap() {
        let pain_only = UtilityWeights::new(1.0, 0.0).unwrap();
        let orade_only = UtilityWeights::new(0.0, 1.0).unwrap();
        assert_eq!(true_optimal_dose(&gt, &x, T, &grid, pain_only), DoseMeq(20.0));
        assert_eq!(true_optimal_dose(&gt, &x, T, &grid, orade_only), DoseMeq(0.0));
    }
    let w = UtilityWeights::default();
    assert_eq!(true_optimal_dose(&gt, &reference_case(), T, &grid, w), DoseMeq(5.0));
}

#[test]
fn noiseless_records_match_the_oracle() {
    let gt = ScmGroundTruth::default().noiseless();
    let c = generate_cohort(&gt, 2000).unwrap();
    let mut by_latent: Vec<(f64, f64)> = Vec::new();
    for r in &c.records {
        let d = DoseMeq(r.administered_dose);
        let pain = true_pain_response(&gt, T, d, &r.features);
        assert_eq!(r.pain_arrival.nrs(), pain.round() as u8);
        let orade = true_orade_response(&gt, T, d, &r.features);
        let sev = opiaid_core::domain::orade_severity(&r.orades, &gt.orade_weights).unwrap();
        assert!((sev - orade).abs() <= 1.5, "severity {sev} far from expectation {orade}");
        by_latent.push((orade, sev));
    }
    // Observed severity is a non-decreasing step function of the expectation.
    by_latent.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(by_latent.windows(2).all(|p| p[0].1 <= p[1].1));
}

#[test]
fn cohorts_are_deterministic() {
    let gt = ScmGroundTruth::default().with_seed(99);
    let a = serde_json::to_vec(&generate_cohort(&gt, 500).unwrap()).unwrap();
    let b = serde_json::to_vec(&generate_cohort(&gt, 500).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sequential_and_parallel_generation_agree() {
    let gt = ScmGroundTruth::default().with_seed(5);
    let parallel = generate_cohort(&gt, 3000).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let sequential = pool.install(|| generate_cohort(&gt, 3000).unwrap());
    assert_eq!(parallel, sequential);
}

#[test]
fn prefix_of_a_larger_cohort_is_the_smaller_cohort() {
    let gt = ScmGroundTruth::default().with_seed(5);
    let small = generate_cohort(&gt, 100).unwrap();
    let large = generate_cohort(&gt, 300).unwrap();
    assert_eq!(small.records[..], large.records[..100]);
}

#[test]
fn every_generated_record_validates() {
    let gt = ScmGroundTruth::default();
    let c = generate_cohort(&gt, 3000).unwrap();
    for r in &c.records {
        r.validate(gt.n_surgery_types(), &gt.registry).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn responses_are_monotone(seed in any::<u64>(), a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let gt = ScmGroundTruth::default();
        let x = sample_features(&gt, 1, seed).unwrap().remove(0);
        let (lo, hi) = (DoseMeq(a.min(b)), DoseMeq(a.max(b)));
        prop_assert!(true_pain_response(&gt, T, lo, &x) >= true_pain_response(&gt, T, hi, &x));
        prop_assert!(true_orade_response(&gt, T, lo, &x) <= true_orade_response(&gt, T, hi, &x));
    }

    #[test]
    fn oracle_beats_every_grid_point(seed in any::<u64>(), wp in 0.0f64..1.0) {
        let gt = ScmGroundTruth::default();
        let x = sample_features(&gt, 1, seed).unwrap().remove(0);
        let w = UtilityWeights::new(wp, 1.0 - wp).unwrap();
        let grid = DoseGrid::default();
        let best = true_optimal_dose(&gt, &x, T, &grid, w).0;
        let u_best = true_utility(&gt, T, best, &x, w);
        for d in grid.points() {
            prop_assert!(u_best >= true_utility(&gt, T, d, &x, w));
        }
    }
}
