//! Linear support vector machine trained in the primal by projected
//! stochastic subgradient descent.
//!
//! Classification is one-vs-rest on the hinge loss, with class
//! probabilities from a softmax over the per-class margins. Regression uses
//! the epsilon-insensitive loss on a standardized target. Step size is
//! `learning_rate / (1 + lambda * learning_rate * t)`; weights are projected
//! onto the ball of radius `1 / sqrt(lambda)` and the model reported for an
//! epoch is the average of that epoch's iterates.
//!
//! Hyperparameters: `lambda` (1e-4), `epochs` (40), `learning_rate` (0.05),
//! `epsilon` (0.05, regression only).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::{softmax, LossPoint, Target};
use crate::rng::{holdout_split, rng, sub_seed};
use crate::{Hyper, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct LinearSvm {
    cols: usize,
    /// One `(weights, bias)` per output: classes, or a single regressor.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    /// `(mean, sd)` of the regression target; `None` for classification.
    target_scale: Option<(f64, f64)>,
}

impl LinearSvm {
    fn score(&self, out: usize, row: &[f64]) -> f64 {
        self.bias[out]
            + self.weights[out]
                .iter()
                .zip(row)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &Dense) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..x.rows {
            let row = x.row(i);
            match self.target_scale {
                Some((mean, sd)) => out.push(self.score(0, row) * sd + mean),
                None => {
                    let mut z: Vec<f64> = (0..self.weights.len())
                        .map(|k| self.score(k, row))
                        .collect();
                    softmax(&mut z);
                    out.extend(z);
                }
            }
        }
        out
    }
}

/// Per-output labels: `+1/-1` for one-vs-rest, or the standardized target.
fn labels(target: &Target, out: usize, i: usize) -> f64 {
    match target {
        Target::Classes { y, .. } => {
            if y[i] == out {
                1.0
            } else {
                -1.0
            }
        }
        Target::Values(y) => y[i],
    }
}

pub(crate) fn fit(
    x: &Dense,
    target: &Target,
    hyper: &Hyper,
    seed: u64,
) -> Result<(LinearSvm, Vec<LossPoint>)> {
    hyper.check_keys(&["lambda", "epochs", "learning_rate", "epsilon"])?;
    let lambda = hyper.positive("lambda", 1e-4)?;
    let epochs = hyper.count("epochs", 40)?;
    let eta0 = hyper.positive("learning_rate", 0.05)?;
    let eps = hyper.non_negative("epsilon", 0.05)?;
    let radius = 1.0 / lambda.sqrt();

    let (fit_rows, val_rows) = holdout_split(x.rows, seed);
    let (n_out, scale) = match target {
        Target::Classes { k, .. } => (*k, None),
        Target::Values(y) => {
            let n = fit_rows.len() as f64;
            let mean = fit_rows.iter().map(|&i| y[i]).sum::<f64>() / n;
            let var = fit_rows.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / n;
            (1, Some((mean, if var > 1e-24 { var.sqrt() } else { 1.0 })))
        }
    };
    let label = |out: usize, i: usize| -> f64 {
        let v = labels(target, out, i);
        match scale {
            Some((m, s)) => (v - m) / s,
            None => v,
        }
    };
    let row_loss = |m: &LinearSvm, out: usize, i: usize| -> f64 {
        let s = m.score(out, x.row(i));
        let y = label(out, i);
        match scale {
            Some(_) => ((s - y).abs() - eps).max(0.0),
            None => (1.0 - y * s).max(0.0),
        }
    };
    let objective = |m: &LinearSvm, rows: &[usize], reg: bool| -> f64 {
        let mut total = 0.0;
        for out in 0..n_out {
            let hinge = rows.iter().map(|&i| row_loss(m, out, i)).sum::<f64>() / rows.len() as f64;
            let penalty = if reg {
                0.5 * lambda * m.weights[out].iter().map(|w| w * w).sum::<f64>()
            } else {
                0.0
            };
            total += hinge + penalty;
        }
        total / n_out as f64
    };

    let mut current = LinearSvm {
        cols: x.cols,
        weights: vec![vec![0.0; x.cols]; n_out],
        bias: vec![0.0; n_out],
        target_scale: scale,
    };
    let mut averaged = current.clone();
    let mut order = fit_rows.clone();
    let mut r = rng(sub_seed(seed, 0x5356));
    let mut t = 0u64;
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut r);
        let mut sum_w = vec![vec![0.0; x.cols]; n_out];
        let mut sum_b = vec![0.0; n_out];
        for &i in &order {
            t += 1;
            let eta = eta0 / (1.0 + lambda * eta0 * t as f64);
            let row = x.row(i);
            for out in 0..n_out {
                let y = label(out, i);
                let s = current.score(out, row);
                // Subgradient of the data term w.r.t. the score.
                let d = match scale {
                    Some(_) if (s - y).abs() > eps => (s - y).signum(),
                    Some(_) => 0.0,
                    None if y * s < 1.0 => -y,
                    None => 0.0,
                };
                let w = &mut current.weights[out];
                for (wj, xj) in w.iter_mut().zip(row) {
                    *wj = (1.0 - eta * lambda) * *wj - eta * d * xj;
                }
                current.bias[out] -= eta * d;
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > radius {
                    w.iter_mut().for_each(|v| *v *= radius / norm);
                }
                for (s, v) in sum_w[out].iter_mut().zip(w.iter()) {
                    *s += v;
                }
                sum_b[out] += current.bias[out];
            }
        }
        let m = order.len() as f64;
        averaged.weights = sum_w
            .into_iter()
            .map(|w| w.into_iter().map(|v| v / m).collect())
            .collect();
        averaged.bias = sum_b.into_iter().map(|b| b / m).collect();
        curve.push(LossPoint {
            round: epoch + 1,
            train_loss: objective(&averaged, &fit_rows, true),
            validation_loss: (!val_rows.is_empty()).then(|| objective(&averaged, &val_rows, false)),
        });
    }
    Ok((averaged, curve))
}
