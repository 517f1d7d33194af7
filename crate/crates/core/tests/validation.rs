use std::collections::BTreeSet;

use opiaid_core::domain::{DoseGrid, EncounterRecord, UtilityWeights};
use opiaid_core::synthgen::{generate_cohort, true_optimal_dose, ScmGroundTruth};
use opiaid_core::validation::*;
use opiaid_core::Error;
use opiaid_learners::LossPoint;
use proptest::prelude::*;

/// Train, test and retention indices, with the partition checked.
fn parts(n: usize, spec: &SplitSpec) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let Split {
        train,
        test,
        retention,
    } = split(n, spec).unwrap();
    let retention = retention.open();
    let all: BTreeSet<usize> = train.iter().chain(&test).chain(&retention).copied().collect();
    assert_eq!(all.len(), n, "parts overlap or miss records");
    assert_eq!(all, (0..n).collect());
    (train, test, retention)
}

#[test]
fn default_split_of_a_thousand() {
    let (train, test, retention) = parts(1000, &SplitSpec::default());
    assert_eq!((train.len(), test.len(), retention.len()), (800, 150, 50));
}

#[test]
fn split_rejects_bad_inputs() {
    assert!(matches!(split(19, &SplitSpec::default()), Err(Error::TooSmall { .. })));
    let bad = SplitSpec {
        train_frac: 0.8,
        test_frac: 0.15,
        retention_frac: 0.1,
        seed: 0,
    };
    assert!(split(100, &bad).is_err());
}

#[test]
fn split_depends_on_the_seed_only() {
    let spec = SplitSpec::default();
    assert_eq!(parts(500, &spec), parts(500, &spec));
    let other = SplitSpec { seed: 1, ..spec };
    assert_ne!(parts(500, &spec).0, parts(500, &other).0);
}

proptest! {
    #[test]
    fn splits_partition_the_records(n in 20usize..3000, seed in any::<u64>()) {
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let (train, test, retention) = parts(n, &spec);
        prop_assert_eq!((train.len(), test.len(), retention.len()), spec.sizes(n));
        prop_assert!(!retention.is_empty() && !test.is_empty());
    }
}

/// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_matches_pairwise_counting_on_every_labeling() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for n in 1..=12usize {
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64 * 0.25).collect();
        for mask in 0u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let single = labels.iter().all(|&l| l) || labels.iter().all(|&l| !l);
            match metric_auc(&scores, &labels) {
                Ok(a) => {
                    assert!(!single);
                    assert!((a - brute_auc(&scores, &labels)).abs() <= 1e-12, "n={n} mask={mask:b}");
                }
                Err(Error::SingleClass) => assert!(single),
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn metric_identities() {
    let v = [1.0, 4.0, 7.0, 0.0];
    assert_eq!(metric_rmse(&v, &v).unwrap(), 0.0);
    assert_eq!(metric_accuracy(&v, &v).unwrap(), 1.0);
    assert_eq!(metric_rmse(&[3.0, 3.0], &[1.0, 5.0]).unwrap(), 2.0);
    assert_eq!(metric_accuracy(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 3.0, 0.0]).unwrap(), 0.5);
    assert_eq!(metric_auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
    assert_eq!(metric_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    assert!(matches!(metric_rmse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    assert!(metric_rmse(&[], &[]).is_err());
}

fn curve(val: &[f64]) -> Vec<LossPoint> {
    val.iter()
        .enumerate()
        .map(|(round, &v)| LossPoint {
            round,
            train_loss: 1.0 / (round + 1) as f64,
            validation_loss: Some(v),
        })
        .collect()
}

#[test]
fn overfitting_is_a_validation_upturn() {
    let fine = detect_overfit(&curve(&[1.0, 0.8, 0.7, 0.72]), DEFAULT_OVERFIT_RATIO).unwrap();
    assert!(!fine.overfit);
    let bad = detect_overfit(&curve(&[1.0, 0.5, 0.6, 0.9]), DEFAULT_OVERFIT_RATIO).unwrap();
    assert!(bad.overfit);
    assert_eq!((bad.best_round, bad.best_validation_loss, bad.final_validation_loss), (1, 0.5, 0.9));
    assert!(detect_overfit(&curve(&[1.0]), DEFAULT_OVERFIT_RATIO).is_none());
}

fn cohort() -> (ScmGroundTruth, Vec<EncounterRecord>) {
    let gt = ScmGroundTruth::default().with_seed(8);
    let c = generate_cohort(&gt, 300).unwrap();
    (gt, c.records)
}

#[test]
fn oracle_ranks_first_with_zero_regret() {
    let (gt, cases) = cohort();
    let grid = DoseGrid::default();
    let w = UtilityWeights::default();
    let methods = vec![
        Method::new("always_ten", MethodKind::RuleBased, |_| Ok(10.0)),
        Method::new("administered", MethodKind::RuleBased, |r: &EncounterRecord| Ok(r.administered_dose)),
        Method::new("oracle", MethodKind::Oracle, |r: &EncounterRecord| {
            Ok(true_optimal_dose(&gt, &r.features, r.treatment, &grid, w).0)
        }),
        Method::new("zero", MethodKind::Random, |_| Ok(0.0)),
    ];
    let e = evaluate_methods(&cases, &methods, &gt, &grid, w).unwrap();
    assert_eq!(e.reports[0].id, "oracle");
    assert_eq!(e.reports[0].regret, 0.0);
    assert_eq!(e.reports[0].dose_mae, 0.0);
    assert_eq!(e.carried_forward.len(), 2);
    assert_eq!(e.carried_forward[0], "oracle");
    assert!(e.reports.iter().all(|r| r.regret >= 0.0 && r.n_cases == cases.len()));
    assert!(e.reports.windows(2).all(|p| rank_order(&p[0], &p[1]).is_lt()));
}

#[test]
fn ranking_ignores_method_order() {
    let (gt, cases) = cohort();
    let grid = DoseGrid::default();
    let w = UtilityWeights::default();
    let make = |ids: &[&'static str]| -> Vec<Method<'static>> {
        ids.iter()
            .map(|&id| {
                let d: f64 = match id {
                    "a" => 2.0,
                    "b" => 6.0,
                    "c" => 6.0,
                    _ => 15.0,
                };
                Method::new(id, MethodKind::RuleBased, move |_| Ok(d))
            })
            .collect()
    };
    let x = evaluate_methods(&cases, &make(&["a", "b", "c", "d"]), &gt, &grid, w).unwrap();
    let y = evaluate_methods(&cases, &make(&["d", "c", "b", "a"]), &gt, &grid, w).unwrap();
    assert_eq!(x, y);
    // Identical doses tie on regret and MAE and fall back to the id.
    let b = x.reports.iter().position(|r| r.id == "b").unwrap();
    assert_eq!(x.reports[b + 1].id, "c");
}

#[test]
fn off_grid_recommendations_are_snapped() {
    let (gt, cases) = cohort();
    let grid = DoseGrid::default();
    let w = UtilityWeights::default();
    let methods = vec![
        Method::new("on", MethodKind::RuleBased, |_| Ok(6.0)),
        Method::new("off", MethodKind::RuleBased, |_| Ok(6.1)),
    ];
    let e = evaluate_methods(&cases, &methods, &gt, &grid, w).unwrap();
    assert_eq!(e.reports[0].regret, e.reports[1].regret);
}

#[test]
fn evaluation_needs_two_methods_and_some_cases() {
    let (gt, cases) = cohort();
    let grid = DoseGrid::default();
    let w = UtilityWeights::default();
    let one = vec![Method::new("x", MethodKind::RuleBased, |_| Ok(1.0))];
    assert!(evaluate_methods(&cases, &one, &gt, &grid, w).is_err());
    let two = vec![
        Method::new("x", MethodKind::RuleBased, |_| Ok(1.0)),
        Method::new("y", MethodKind::RuleBased, |_| Ok(f64::NAN)),
    ];
    assert!(evaluate_methods(&cases, &two, &gt, &grid, w).is_err());
    assert!(evaluate_methods(&[], &two, &gt, &grid, w).is_err());
}
