//! Internal validation: data splits, outcome-model metrics, overfitting
//! checks and the oracle-regret comparison of dose recommenders.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use opiaid_learners::LossPoint;

use crate::domain::{DoseGrid, EncounterRecord, UtilityWeights};
use crate::synthgen::{true_optimal_dose, true_utility, ScmGroundTruth};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub retention_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.80,
            test_frac: 0.15,
            retention_frac: 0.05,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_frac, self.test_frac, self.retention_frac];
        if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("split fractions must be positive".into()));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// `(train, test, retention)` sizes for `n` records: test and retention
    /// are rounded, train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = (self.test_frac * n as f64).round() as usize;
        let retention = (self.retention_frac * n as f64).round() as usize;
        (n - test - retention, test, retention)
    }
}

/// Retention indices. They can be taken out exactly once.
#[derive(Debug, PartialEq, Eq)]
pub struct Retention(Vec<usize>);

impl Retention {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn open(self) -> Vec<usize> {
        self.0
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub retention: Retention,
}

pub const MIN_SPLIT_RECORDS: usize = 20;

/// Seeded random partition of `0..n`.
pub fn split(n: usize, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::TooSmall {
            min: MIN_SPLIT_RECORDS,
            got: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_train, n_test, _) = spec.sizes(n);
    let retention = idx.split_off(n_train + n_test);
    let test = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        test,
        retention: Retention(retention),
    })
}

pub fn select(records: &[EncounterRecord], idx: &[usize]) -> Vec<EncounterRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::InsufficientData("empty input".into()));
    }
    Ok(())
}

pub fn metric_accuracy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn metric_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Area under the ROC curve as the Mann-Whitney statistic; tied scores earn
/// half credit.
pub fn metric_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = crate::baselines::average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitCheck {
    pub overfit: bool,
    pub best_round: usize,
    pub best_validation_loss: f64,
    pub final_validation_loss: f64,
}

pub const DEFAULT_OVERFIT_RATIO: f64 = 1.10;

/// Flags a curve whose final validation loss exceeds its minimum by more
/// than `ratio`. `None` when fewer than two rounds carry a validation loss.
pub fn detect_overfit(curve: &[LossPoint], ratio: f64) -> Option<OverfitCheck> {
    let val: Vec<(usize, f64)> = curve
        .iter()
        .filter_map(|p| p.validation_loss.map(|v| (p.round, v)))
        .collect();
    if val.len() < 2 {
        return None;
    }
    let mut best = val[0];
    for &(r, v) in &val[1..] {
        if v < best.1 {
            best = (r, v);
        }
    }
    let last = val[val.len() - 1].1;
    Some(OverfitCheck {
        overfit: last > best.1 * ratio,
        best_round: best.0,
        best_validation_loss: best.1,
        final_validation_loss: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    CausalMl,
    ProxyMarker,
    RuleBased,
    Oracle,
    Random,
}

/// Test-split scores of one outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointMetrics {
    pub rmse: f64,
    /// Exact-match rate of rounded predictions against the rounded target.
    pub accuracy: f64,
    /// Discrimination of the binarized outcome by the prediction; `None`
    /// when the test split holds a single class.
    pub auc: Option<f64>,
    pub overfit: Option<OverfitCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMetrics {
    pub pain: EndpointMetrics,
    pub orade: EndpointMetrics,
}

impl OutcomeMetrics {
    pub fn overfit(&self) -> bool {
        [self.pain.overfit, self.orade.overfit]
            .iter()
            .any(|c| c.is_some_and(|c| c.overfit))
    }
}

type Recommender<'a> = Box<dyn Fn(&EncounterRecord) -> Result<f64> + Send + Sync + 'a>;

/// A dose recommender under evaluation.
pub struct Method<'a> {
    pub id: String,
    pub kind: MethodKind,
    pub recommend: Recommender<'a>,
    pub metrics: Option<OutcomeMetrics>,
}

impl<'a> Method<'a> {
    pub fn new<F>(id: impl Into<String>, kind: MethodKind, f: F) -> Self
    where
        F: Fn(&EncounterRecord) -> Result<f64> + Send + Sync + 'a,
    {
        Method {
            id: id.into(),
            kind,
            recommend: Box::new(f),
            metrics: None,
        }
    }

    pub fn with_metrics(mut self, metrics: OutcomeMetrics) -> Self {
        self.metrics = Some(metrics);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub id: String,
    pub kind: MethodKind,
    pub n_cases: usize,
    /// Mean `|recommended - oracle|`, MEQ, after snapping to the grid.
    pub dose_mae: f64,
    /// Mean true-utility shortfall against the oracle dose; never negative.
    pub regret: f64,
    pub metrics: Option<OutcomeMetrics>,
    pub overfit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub weights: UtilityWeights,
    /// Best first: by regret, then dose MAE, then id.
    pub reports: Vec<MethodReport>,
    pub carried_forward: Vec<String>,
}

/// Scores every method against the oracle on `cases` and carries the two
/// best forward. Recommended doses are snapped to the nearest grid point.
pub fn evaluate_methods(
    cases: &[EncounterRecord],
    methods: &[Method<'_>],
    oracle: &ScmGroundTruth,
    grid: &DoseGrid,
    w: UtilityWeights,
) -> Result<Evaluation> {
    w.validate()?;
    if methods.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least two methods, got {}",
            methods.len()
        )));
    }
    if cases.is_empty() {
        return Err(Error::InsufficientData("no evaluation cases".into()));
    }
    let optimum: Vec<(f64, f64)> = cases
        .par_iter()
        .map(|r| {
            let d = true_optimal_dose(oracle, &r.features, r.treatment, grid, w).0;
            (d, true_utility(oracle, r.treatment, d, &r.features, w))
        })
        .collect();
    let mut reports = methods
        .par_iter()
        .map(|m| {
            let mut regret = 0.0;
            let mut mae = 0.0;
            for (r, &(d_star, u_star)) in cases.iter().zip(&optimum) {
                let raw = (m.recommend)(r)?;
                if !raw.is_finite() {
                    return Err(Error::InvalidConfig(format!("method {} returned {raw}", m.id)));
                }
                let d = grid.snap(raw);
                regret += u_star - true_utility(oracle, r.treatment, d, &r.features, w);
                mae += (d - d_star).abs();
            }
            let n = cases.len() as f64;
            Ok(MethodReport {
                id: m.id.clone(),
                kind: m.kind,
                n_cases: cases.len(),
                dose_mae: mae / n,
                regret: regret / n,
                metrics: m.metrics,
                overfit: m.metrics.is_some_and(|x| x.overfit()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| {
        a.regret
            .total_cmp(&b.regret)
            .then(a.dose_mae.total_cmp(&b.dose_mae))
            .then_with(|| a.id.cmp(&b.id))
    });
    let carried_forward = reports.iter().take(2).map(|r| r.id.clone()).collect();
    Ok(Evaluation {
        weights: w,
        reports,
        carried_forward,
    })
}

/// Orders reports like [`evaluate_methods`] does.
pub fn rank_order(a: &MethodReport, b: &MethodReport) -> Ordering {
    a.regret
        .total_cmp(&b.regret)
        .then(a.dose_mae.total_cmp(&b.dose_mae))
        .then_with(|| a.id.cmp(&b.id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = SplitSpec::default();
        assert_eq!(s.sizes(1000), (800, 150, 50));
        assert_eq!(s.sizes(20), (16, 3, 1));
        assert!(matches!(split(19, &s), Err(Error::TooSmall { .. })));
        let bad = SplitSpec {
            train_frac: 0.5,
            ..s
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn metric_identities() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(metric_accuracy(&v, &v).unwrap(), 1.0);
        assert_eq!(metric_rmse(&v, &v).unwrap(), 0.0);
        assert_eq!(
            metric_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(
            metric_auc(&[0.5; 4], &[true, false, true, false]).unwrap(),
            0.5
        );
        assert!(matches!(metric_auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
        assert!(matches!(metric_rmse(&v, &v[..2]), Err(Error::LengthMismatch(3, 2))));
    }

    fn curve(vals: &[f64]) -> Vec<LossPoint> {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| LossPoint {
                round: i,
                train_loss: v,
                validation_loss: Some(v),
            })
            .collect()
    }

    #[test]
    fn overfit_examples() {
        assert!(!detect_overfit(&curve(&[3.0, 2.0, 1.0]), 1.1).unwrap().overfit);
        let mut vals = vec![2.0; 16];
        vals[10] = 1.0;
        vals[15] = 1.5;
        let c = detect_overfit(&curve(&vals), 1.1).unwrap();
        assert!(c.overfit);
        assert_eq!(c.best_round, 10);
        assert!(!detect_overfit(&curve(&[1.0, 1.0]), 1.1).unwrap().overfit);
        assert!(detect_overfit(&curve(&[1.0]), 1.1).is_none());
    }
}
