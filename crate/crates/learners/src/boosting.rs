//! Second-order gradient boosted trees with shrinkage and per-tree column
//! subsampling.
//!
//! Regression minimizes squared error; classification minimizes softmax
//! cross-entropy with one tree per class and round. Leaf weights are the
//! Newton step `-G / (H + lambda)` scaled by `learning_rate`.
//!
//! Hyperparameters: `n_rounds` (200), `learning_rate` (0.1), `max_depth` (4),
//! `lambda` (1.0), `gamma` (0.0), `min_child_weight` (1.0), `colsample`
//! (0.8), `min_samples_leaf` (1).

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::{softmax, LossPoint, OwnedTarget, Target};
use crate::rng::{holdout_split, rng, sub_seed};
use crate::tree::{grow, GrowParams, Newton, Tree};
use crate::{Hyper, Result};

const KEYS: &[&str] = &[
    "n_rounds",
    "learning_rate",
    "max_depth",
    "lambda",
    "gamma",
    "min_child_weight",
    "colsample",
    "min_samples_leaf",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Boosting {
    /// Initial score per output.
    base: Vec<f64>,
    /// `rounds[r][k]` is the tree for output `k` in round `r`.
    rounds: Vec<Vec<Tree>>,
}

impl Boosting {
    fn out_dim(&self) -> usize {
        self.base.len()
    }

    fn add_round_scores(trees: &[Tree], x: &Dense, rows: &[usize], scores: &mut [f64]) {
        let k = trees.len();
        for (pos, &i) in rows.iter().enumerate() {
            for (j, t) in trees.iter().enumerate() {
                scores[pos * k + j] += t.leaf_value(x.row(i))[0];
            }
        }
    }

    fn raw_scores(&self, row: &[f64]) -> Vec<f64> {
        let mut s = self.base.clone();
        for round in &self.rounds {
            for (v, t) in s.iter_mut().zip(round) {
                *v += t.leaf_value(row)[0];
            }
        }
        s
    }

    pub fn predict(&self, x: &Dense) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.rows * self.out_dim());
        for i in 0..x.rows {
            let mut s = self.raw_scores(x.row(i));
            if self.out_dim() > 1 {
                softmax(&mut s);
            }
            out.extend(s);
        }
        out
    }
}

fn loss(target: &Target, scores: &[f64]) -> f64 {
    match target {
        Target::Values(y) => {
            y.iter()
                .zip(scores)
                .map(|(y, s)| (s - y).powi(2))
                .sum::<f64>()
                / y.len() as f64
        }
        Target::Classes { y, k } => {
            let mut total = 0.0;
            for (i, &c) in y.iter().enumerate() {
                let mut p = scores[i * k..(i + 1) * k].to_vec();
                softmax(&mut p);
                total -= p[c].max(1e-300).ln();
            }
            total / y.len() as f64
        }
    }
}

pub(crate) fn fit(
    x: &Dense,
    target: &Target,
    hyper: &Hyper,
    seed: u64,
) -> Result<(Boosting, Vec<LossPoint>)> {
    hyper.check_keys(KEYS)?;
    let n_rounds = hyper.count("n_rounds", 200)?;
    let eta = hyper.fraction("learning_rate", 0.1)?;
    let lambda = hyper.non_negative("lambda", 1.0)?;
    let gamma = hyper.non_negative("gamma", 0.0)?;
    let min_child_weight = hyper.non_negative("min_child_weight", 1.0)?;
    let colsample = hyper.fraction("colsample", 0.8)?;
    let params = GrowParams {
        max_depth: hyper.depth("max_depth", Some(4))?,
        min_samples_split: 2,
        min_samples_leaf: hyper.count("min_samples_leaf", 1)?,
        max_features: None,
    };

    let (fit_rows, val_rows) = holdout_split(x.rows, seed);
    let fit_target = target.select(&fit_rows);
    let val_target = target.select(&val_rows);
    let fit_x = x.select_rows(&fit_rows);
    let n = fit_rows.len();

    let base = match &fit_target {
        OwnedTarget::Values(y) => vec![y.iter().sum::<f64>() / n as f64],
        OwnedTarget::Classes { y, k } => {
            let mut counts = vec![1.0; *k];
            for &c in y {
                counts[c] += 1.0;
            }
            let total: f64 = counts.iter().sum();
            counts.iter().map(|c| (c / total).ln()).collect()
        }
    };
    let k = base.len();
    let mut fit_scores: Vec<f64> = (0..n).flat_map(|_| base.clone()).collect();
    let mut val_scores: Vec<f64> = (0..val_rows.len()).flat_map(|_| base.clone()).collect();

    let n_cols = ((colsample * x.cols as f64).round() as usize).clamp(1, x.cols);
    let all_fit: Vec<usize> = (0..n).collect();
    let mut col_rng = rng(sub_seed(seed, 0xB005));
    let mut model = Boosting {
        base,
        rounds: Vec::with_capacity(n_rounds),
    };
    let mut curve = Vec::with_capacity(n_rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];

    for round in 0..n_rounds {
        let mut trees = Vec::with_capacity(k);
        for out in 0..k {
            match &fit_target {
                OwnedTarget::Values(y) => {
                    for i in 0..n {
                        g[i] = fit_scores[i] - y[i];
                        h[i] = 1.0;
                    }
                }
                OwnedTarget::Classes { y, .. } => {
                    for i in 0..n {
                        let mut p = fit_scores[i * k..(i + 1) * k].to_vec();
                        softmax(&mut p);
                        let yk = if y[i] == out { 1.0 } else { 0.0 };
                        g[i] = p[out] - yk;
                        h[i] = (p[out] * (1.0 - p[out])).max(1e-6);
                    }
                }
            }
            let mut cols: Vec<usize> = if n_cols < x.cols {
                sample(&mut col_rng, x.cols, n_cols).into_vec()
            } else {
                (0..x.cols).collect()
            };
            cols.sort_unstable();
            let crit = Newton {
                g: &g,
                h: &h,
                lambda,
                gamma,
                min_child_weight,
            };
            let mut tree = grow(&fit_x, all_fit.clone(), &crit, &params, &cols, &mut col_rng);
            tree.scale_leaves(eta);
            trees.push(tree);
        }
        // Scores are updated after all class trees of the round are grown so
        // every class sees the same gradients.
        for (out, tree) in trees.iter().enumerate() {
            for i in 0..n {
                fit_scores[i * k + out] += tree.leaf_value(fit_x.row(i))[0];
            }
        }
        Boosting::add_round_scores(&trees, x, &val_rows, &mut val_scores);
        model.rounds.push(trees);
        curve.push(LossPoint {
            round: round + 1,
            train_loss: loss(&fit_target.view(), &fit_scores),
            validation_loss: (!val_rows.is_empty()).then(|| loss(&val_target.view(), &val_scores)),
        });
    }
    Ok((model, curve))
}
