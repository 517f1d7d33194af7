//! Multinomial (softmax) logistic regression fit by full-batch gradient
//! descent with an L2 penalty.
//!
//! Hyperparameters: `learning_rate` (0.5), `epochs` (300), `l2` (1e-4).
//! A step that raises the objective is undone and the step size halved.

use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::{softmax, LossPoint, Target};
use crate::rng::holdout_split;
use crate::{Hyper, LearnerError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Logistic {
    n_classes: usize,
    cols: usize,
    /// `n_classes x cols`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Logistic {
    fn probs(&self, row: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.n_classes)
            .map(|k| {
                self.bias[k]
                    + self.weights[k * self.cols..(k + 1) * self.cols]
                        .iter()
                        .zip(row)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect();
        softmax(&mut z);
        z
    }

    pub fn predict(&self, x: &Dense) -> Vec<f64> {
        (0..x.rows).flat_map(|i| self.probs(x.row(i))).collect()
    }

    fn nll(&self, x: &Dense, rows: &[usize], y: &[usize]) -> f64 {
        rows.iter()
            .map(|&i| -self.probs(x.row(i))[y[i]].max(1e-300).ln())
            .sum::<f64>()
            / rows.len() as f64
    }

    fn objective(&self, x: &Dense, rows: &[usize], y: &[usize], l2: f64) -> f64 {
        self.nll(x, rows, y) + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

pub(crate) fn fit(
    x: &Dense,
    target: &Target,
    hyper: &Hyper,
    seed: u64,
) -> Result<(Logistic, Vec<LossPoint>)> {
    hyper.check_keys(&["learning_rate", "epochs", "l2"])?;
    let mut lr = hyper.positive("learning_rate", 0.5)?;
    let epochs = hyper.count("epochs", 300)?;
    let l2 = hyper.non_negative("l2", 1e-4)?;
    let Target::Classes { y, k } = target else {
        return Err(LearnerError::UnsupportedTask {
            family: "multinomial_logistic".into(),
            task: "regression".into(),
        });
    };
    let (fit_rows, val_rows) = holdout_split(x.rows, seed);
    let mut model = Logistic {
        n_classes: *k,
        cols: x.cols,
        weights: vec![0.0; k * x.cols],
        bias: vec![0.0; *k],
    };
    let mut best = model.objective(x, &fit_rows, y, l2);
    let mut curve = Vec::with_capacity(epochs);
    let n = fit_rows.len() as f64;
    for epoch in 0..epochs {
        let mut gw = vec![0.0; model.weights.len()];
        let mut gb = vec![0.0; *k];
        for &i in &fit_rows {
            let row = x.row(i);
            let mut p = model.probs(row);
            p[y[i]] -= 1.0;
            for (c, d) in p.iter().enumerate() {
                gb[c] += d / n;
                for (g, xv) in gw[c * x.cols..(c + 1) * x.cols].iter_mut().zip(row) {
                    *g += d * xv / n;
                }
            }
        }
        let previous = model.clone();
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * (g + l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= lr * g;
        }
        let obj = model.objective(x, &fit_rows, y, l2);
        if obj <= best {
            best = obj;
        } else {
            model = previous;
            lr *= 0.5;
        }
        curve.push(LossPoint {
            round: epoch + 1,
            train_loss: best,
            validation_loss: (!val_rows.is_empty()).then(|| model.nll(x, &val_rows, y)),
        });
    }
    Ok((model, curve))
}
