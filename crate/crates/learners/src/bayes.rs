//! Gaussian naive Bayes. Each encoded feature gets a per-class normal
//! density; `var_smoothing` (default 1e-3) is added to every variance so
//! one-hot columns that are constant within a class stay finite.

use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::{softmax, Target};
use crate::{Hyper, LearnerError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GaussianNb {
    log_prior: Vec<f64>,
    /// `n_classes x cols`.
    mean: Vec<f64>,
    var: Vec<f64>,
    cols: usize,
}

pub(crate) fn fit(x: &Dense, target: &Target, hyper: &Hyper) -> Result<GaussianNb> {
    hyper.check_keys(&["var_smoothing"])?;
    let smoothing = hyper.positive("var_smoothing", 1e-3)?;
    let Target::Classes { y, k } = target else {
        return Err(LearnerError::UnsupportedTask {
            family: "gaussian_naive_bayes".into(),
            task: "regression".into(),
        });
    };
    let (k, p) = (*k, x.cols);
    let mut count = vec![0.0f64; k];
    let mut mean = vec![0.0; k * p];
    for i in 0..x.rows {
        let c = y[i];
        count[c] += 1.0;
        for (m, v) in mean[c * p..(c + 1) * p].iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for c in 0..k {
        mean[c * p..(c + 1) * p]
            .iter_mut()
            .for_each(|m| *m /= count[c].max(1.0));
    }
    let mut var = vec![0.0; k * p];
    for i in 0..x.rows {
        let c = y[i];
        for j in 0..p {
            var[c * p + j] += (x.get(i, j) - mean[c * p + j]).powi(2);
        }
    }
    for c in 0..k {
        var[c * p..(c + 1) * p]
            .iter_mut()
            .for_each(|v| *v = *v / count[c].max(1.0) + smoothing);
    }
    let n = x.rows as f64;
    // Classes are observed, so every count is positive.
    let log_prior = count.iter().map(|c| (c / n).ln()).collect();
    Ok(GaussianNb {
        log_prior,
        mean,
        var,
        cols: p,
    })
}

impl GaussianNb {
    pub fn predict(&self, x: &Dense) -> Vec<f64> {
        let p = self.cols;
        let mut out = Vec::with_capacity(x.rows * self.log_prior.len());
        for i in 0..x.rows {
            let row = x.row(i);
            let mut z: Vec<f64> = self
                .log_prior
                .iter()
                .enumerate()
                .map(|(c, lp)| {
                    let m = &self.mean[c * p..(c + 1) * p];
                    let v = &self.var[c * p..(c + 1) * p];
                    lp + row
                        .iter()
                        .zip(m.iter().zip(v))
                        .map(|(x, (m, v))| {
                            -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v)
                        })
                        .sum::<f64>()
                })
                .collect();
            softmax(&mut z);
            out.extend(z);
        }
        out
    }
}
