//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opiaid_core::baselines::{proxy_marker_score, random_dose, rule_based_optimal_dose, RuleTable};
use opiaid_core::cadr::cadr_curve;
use opiaid_core::diagnostics::{overlap_diagnostic, OverlapConfig};
use opiaid_core::domain::{validate_pain, DoseGrid, DoseMeq, OradeRecord, Treatment, UtilityWeights};
use opiaid_core::experiment::*;
use opiaid_core::io::{cohort_csv_bytes, to_json_bytes, ModelBundle};
use opiaid_core::recommendation::{argmax_utility, recommend_dose};
use opiaid_core::synthgen::*;
use opiaid_core::validation::*;
use opiaid_core::Error;
use opiaid_learners::mlp::Mlp;
use opiaid_learners::{check_gradient, Task};

const T: Treatment = Treatment::MORPHINE;

type Outcome = (bool, String);

struct Main {
    cfg: ExperimentConfig,
    trained: TrainingOutput,
    evaluated: EvaluationOutput,
    retention: Vec<opiaid_core::domain::EncounterRecord>,
    elapsed: Duration,
}

/// The noiseless n = 5000 run shared by several criteria.
fn main_run() -> Main {
    let cfg = ExperimentConfig {
        scm: ScmGroundTruth::default().noiseless(),
        n: 5000,
        include_oracle: true,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let cohort = generate_cohort(&cfg.scm, cfg.n).unwrap();
    let s = split(cohort.records.len(), &cfg.split).unwrap();
    let trained = train_stage(&cohort.records, &s, &cfg).unwrap();
    let retention_idx = s.retention.open();
    let retention = select(&cohort.records, &retention_idx);
    let evaluated = evaluate_stage(
        &cohort.records,
        split(cohort.records.len(), &cfg.split).unwrap().retention,
        &trained,
        &cfg,
    )
    .unwrap();
    Main {
        elapsed: start.elapsed(),
        cfg,
        trained,
        evaluated,
        retention,
    }
}

fn oracle_regret(m: &Main) -> Outcome {
    let best = m
        .evaluated
        .evaluation
        .reports
        .iter()
        .find(|r| r.kind == MethodKind::CausalMl)
        .unwrap();
    let ok = best.regret < 0.15 && best.dose_mae < 1.0 && m.elapsed < Duration::from_secs(300);
    (
        ok,
        format!(
            "best causal-ML {}: regret {:.4}, dose MAE {:.3} MEQ on {} retention cases; runtime {:.1}s",
            best.id,
            best.regret,
            best.dose_mae,
            best.n_cases,
            m.elapsed.as_secs_f64()
        ),
    )
}

fn known_optimum(m: &Main) -> Outcome {
    let w = UtilityWeights::new(0.5, 0.5).unwrap();
    let grid = DoseGrid::new(0.0, 20.0, 0.5).unwrap();
    let x = reference_case();
    let p = m.cfg.scm.case_parameters(&x);
    let documented = (p.p0, p.ed50, p.s_max, p.od50) == (8.0, 5.0, 6.0, 10.0);
    let oracle = true_optimal_dose(&m.cfg.scm, &x, T, &grid, w);
    let ctx = m.trained.diagnostics();
    let dose_of = |id: &str| {
        recommend_dose(&m.trained.model(id).unwrap().model, &x, T, w, &ctx)
            .unwrap()
            .dose_meq
    };
    let selected = dose_of(SELECTED_ID);
    let best_id = &m
        .evaluated
        .evaluation
        .reports
        .iter()
        .find(|r| r.kind == MethodKind::CausalMl)
        .unwrap()
        .id;
    let ok = documented && oracle == DoseMeq(5.0) && (selected - 5.0).abs() <= 1.0;
    (
        ok,
        format!(
            "oracle {} MEQ; selected model ({SELECTED_ID}) recommends {selected} MEQ; \
             lowest-regret model {best_id} recommends {} MEQ",
            oracle.0,
            dose_of(best_id)
        ),
    )
}

fn utility_algebra(m: &Main) -> Outcome {
    let xs = sample_features(&m.cfg.scm, 1000, 2024).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut moved = 0usize;
    let mut checks = 0usize;
    for x in &xs {
        let w = UtilityWeights::new(rng.random_range(0.0..1.0), rng.random_range(0.01..1.0)).unwrap();
        let c = rng.random_range(0.01..100.0);
        for tm in &m.trained.models {
            let a = cadr_curve(&tm.model, x, T, w).unwrap();
            let b = cadr_curve(&tm.model, x, T, w.scaled(c)).unwrap();
            for (ua, ub) in a.utility.iter().zip(&b.utility) {
                worst = worst.max((ub - c * ua).abs());
            }
            if argmax_utility(&a.utility) != argmax_utility(&b.utility) {
                moved += 1;
            }
            checks += 1;
        }
    }
    (
        worst <= 1e-9 && moved == 0,
        format!(
            "{checks} (case, model) pairs over 1000 cases: max |mu(cw) - c mu(w)| = {worst:.2e}, \
             argmax moved in {moved}"
        ),
    )
}

fn boundary_policies(m: &Main) -> Outcome {
    let ctx = m.trained.diagnostics();
    let (mut pain_checked, mut orade_checked, mut wrong) = (0usize, 0usize, 0usize);
    let w = UtilityWeights::default();
    let pain_only = UtilityWeights::new(1.0, 0.0).unwrap();
    let orade_only = UtilityWeights::new(0.0, 1.0).unwrap();
    for tm in &m.trained.models {
        for r in &m.retention {
            let c = cadr_curve(&tm.model, &r.features, T, w).unwrap();
            if c.pain_hat.windows(2).all(|p| p[1] < p[0]) {
                pain_checked += 1;
                let d = recommend_dose(&tm.model, &r.features, T, pain_only, &ctx).unwrap().dose_meq;
                wrong += usize::from(d != m.cfg.grid.max());
            }
            if c.orade_hat.windows(2).all(|p| p[1] > p[0]) {
                orade_checked += 1;
                let d = recommend_dose(&tm.model, &r.features, T, orade_only, &ctx).unwrap().dose_meq;
                wrong += usize::from(d != 0.0);
            }
        }
    }
    (
        wrong == 0 && pain_checked > 0 && orade_checked > 0,
        format!(
            "{pain_checked} strictly decreasing pain curves, {orade_checked} strictly increasing \
             adverse-event curves; {wrong} wrong boundary doses"
        ),
    )
}

fn split_contract() -> Outcome {
    let s = split(1000, &SplitSpec::default()).unwrap();
    let (train, test) = (s.train, s.test);
    let retention = s.retention.open();
    let all: BTreeSet<usize> = train.iter().chain(&test).chain(&retention).copied().collect();
    let sizes = (train.len(), test.len(), retention.len());
    let disjoint = all.len() == 1000;
    let exhaustive = all == (0..1000).collect();
    (
        sizes == (800, 150, 50) && disjoint && exhaustive,
        format!("sizes {sizes:?}, disjoint {disjoint}, exhaustive {exhaustive}"),
    )
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut labelings = 0usize;
    let mut bad_single = 0usize;
    for n in 2..=12usize {
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        for mask in 0u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let single = mask == 0 || mask == (1 << n) - 1;
            match metric_auc(&scores, &labels) {
                Ok(a) if !single => {
                    worst = worst.max((a - brute_auc(&scores, &labels)).abs());
                    labelings += 1;
                }
                Err(Error::SingleClass) if single => {}
                _ => bad_single += 1,
            }
        }
    }
    let v = [0.0, 3.0, 7.0, 10.0];
    let identities = metric_rmse(&v, &v).unwrap() == 0.0
        && metric_accuracy(&v, &v).unwrap() == 1.0
        && metric_rmse(&[3.0, 3.0], &[1.0, 5.0]).unwrap() == 2.0
        && metric_accuracy(&[1.0, 2.0], &[1.0, 0.0]).unwrap() == 0.5;
    (
        worst <= 1e-12 && bad_single == 0 && identities,
        format!(
            "{labelings} labelings of size 2..=12: max AUC deviation {worst:.1e}; \
             RMSE/accuracy identities {identities}"
        ),
    )
}

fn gradient_check() -> Outcome {
    let p = 20;
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let inputs: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let reg_t: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..10.0)).collect();
        let cls_t: Vec<f64> = (0..16).map(|i| (i % 4) as f64).collect();
        let reg = Mlp::new(&[p, 32, 16, 1], Task::Regression, seed);
        let cls = Mlp::new(&[p, 32, 4], Task::Classification, seed);
        worst = worst
            .max(check_gradient(&reg, &inputs, &reg_t, 1e-5))
            .max(check_gradient(&cls, &inputs, &cls_t, 1e-5));
    }
    (
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 10 seeds (regression and classification)"),
    )
}

fn rule_anchor() -> Outcome {
    let d = rule_based_optimal_dose(10.0, validate_pain(5).unwrap(), &OradeRecord::default(), &RuleTable::default())
        .unwrap();
    (d == DoseMeq(12.0), format!("administered 10 MEQ, NRS 5, no adverse events -> {} MEQ", d.0))
}

fn overlap() -> Outcome {
    let cfg = OverlapConfig {
        n_strata: 5,
        n_dose_bins: 10,
        min_count: 5,
    };
    let grid = DoseGrid::default();
    let truncation = 5.0;

    let mut gt = ScmGroundTruth::default().with_seed(31);
    gt.policy = DosePolicy::uniform(20.0);
    gt.policy.positivity_violation = Some(PositivityViolation {
        n_strata: cfg.n_strata,
        stratum: 0,
        max_dose: truncation,
    });
    let c = generate_cohort(&gt, 10_000).unwrap();
    let report = overlap_diagnostic(&c.records, &grid, cfg).unwrap();
    let expected: Vec<(usize, usize)> = report
        .cells
        .iter()
        .filter(|cell| cell.stratum == 0 && cell.dose_lo >= truncation)
        .map(|cell| (cell.stratum, cell.bin))
        .collect();
    let exact = report.violations == expected;

    let mut uniform = ScmGroundTruth::default().with_seed(32);
    uniform.policy = DosePolicy::uniform(20.0);
    let c = generate_cohort(&uniform, 10_000).unwrap();
    let clean = overlap_diagnostic(&c.records, &grid, cfg).unwrap();
    (
        exact && clean.violations.is_empty() && !expected.is_empty(),
        format!(
            "truncated stratum 0 at {truncation} MEQ: flagged {:?} (expected {:?}); \
             uniform policy: {} flags",
            report.violations,
            expected,
            clean.violations.len()
        ),
    )
}

fn proxy_ordering() -> Outcome {
    let grid = DoseGrid::default();
    let w = UtilityWeights::default();
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..10u64 {
        let gt = ScmGroundTruth::default().with_seed(seed);
        let c = generate_cohort(&gt, 5000).unwrap();
        let oracle = proxy_marker_score(&c.records, |r| {
            Ok(true_optimal_dose(&gt, &r.features, r.treatment, &grid, w).0)
        })
        .unwrap();
        let random = proxy_marker_score(&c.records, |r| Ok(random_dose(&grid, seed, r.case_id))).unwrap();
        let (a, b) = (
            oracle.pacu_los.pearson_r.unwrap_or(f64::NAN),
            random.pacu_los.pearson_r.unwrap_or(f64::NAN),
        );
        if a > b {
            wins += 1;
        }
        gaps.push(format!("{:.2}/{:.2}", a, b));
    }
    (
        wins == 10,
        format!("oracle beats random on {wins}/10 seeds (r oracle/random: {})", gaps.join(" ")),
    )
}

fn carry_forward(m: &Main) -> Outcome {
    let e = &m.evaluated.evaluation;
    let first = &e.reports[0];
    (
        e.carried_forward.len() == 2 && first.id == ORACLE_ID && first.regret == 0.0,
        format!("carried forward {:?}; first {} with regret {}", e.carried_forward, first.id, first.regret),
    )
}

/// Cohort CSV, every model bundle and the evaluation report of one run.
fn artifacts(manifest: &[u8]) -> Vec<(String, Vec<u8>)> {
    let cfg: ExperimentConfig = serde_json::from_slice(manifest).unwrap();
    let cohort = generate_cohort(&cfg.scm, cfg.n).unwrap();
    let s = split(cohort.records.len(), &cfg.split).unwrap();
    let trained = train_stage(&cohort.records, &s, &cfg).unwrap();
    let evaluated = evaluate_stage(&cohort.records, s.retention, &trained, &cfg).unwrap();
    let mut out = vec![(
        "cohort.csv".to_string(),
        cohort_csv_bytes(&cohort.records, &cohort.ground_truth.registry).unwrap(),
    )];
    for m in &trained.models {
        let b = ModelBundle::new(m.id.clone(), m.model.clone(), trained.diagnostics());
        out.push((m.id.clone(), b.to_bytes().unwrap()));
    }
    out.push(("report".into(), to_json_bytes(&evaluated).unwrap()));
    out
}

fn reproducibility() -> Outcome {
    let cfg = ExperimentConfig {
        n: 1500,
        include_oracle: true,
        ..ExperimentConfig::default()
    };
    let manifest = to_json_bytes(&cfg).unwrap();
    let a = artifacts(&manifest);
    let b = artifacts(&manifest);
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    (
        a.len() == b.len() && differing.is_empty(),
        format!("{} artifacts compared byte-for-byte, {} differ {:?}", a.len(), differing.len(), differing),
    )
}

fn run(name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    let m = main_run();
    let results = [
        run("oracle_regret", || oracle_regret(&m)),
        run("known_optimum_recovery", || known_optimum(&m)),
        run("utility_algebra", || utility_algebra(&m)),
        run("boundary_policies", || boundary_policies(&m)),
        run("split_contract", split_contract),
        run("metric_oracles", metric_oracles),
        run("gradient_check", gradient_check),
        run("rule_based_anchor", rule_anchor),
        run("overlap_diagnostic", overlap),
        run("proxy_marker_ordering", proxy_ordering),
        run("method_carry_forward", || carry_forward(&m)),
        run("reproducibility", reproducibility),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
