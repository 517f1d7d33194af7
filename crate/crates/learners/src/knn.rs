//! Brute-force k-nearest neighbours on the encoded feature space.
//!
//! Hyperparameters: `k` (15), `weighted` (1 = inverse-distance weights,
//! 0 = uniform). Neighbours at distance zero take all the weight.

use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::Target;
use crate::{Hyper, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Knn {
    k: usize,
    weighted: bool,
    cols: usize,
    points: Vec<f64>,
    values: Vec<f64>,
    /// Number of classes, 0 for regression. Class targets are stored in
    /// `values` as indices.
    n_classes: usize,
}

pub(crate) fn fit(x: &Dense, target: &Target, hyper: &Hyper) -> Result<Knn> {
    hyper.check_keys(&["k", "weighted"])?;
    let k = hyper.count("k", 15)?.min(x.rows);
    let weighted = hyper.float("weighted", 1.0)? != 0.0;
    let (values, n_classes) = match target {
        Target::Values(y) => (y.to_vec(), 0),
        Target::Classes { y, k } => (y.iter().map(|&c| c as f64).collect(), *k),
    };
    Ok(Knn {
        k,
        weighted,
        cols: x.cols,
        points: x.data.clone(),
        values,
        n_classes,
    })
}

impl Knn {
    fn neighbours(&self, row: &[f64]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .chunks(self.cols)
            .enumerate()
            .map(|(i, p)| {
                let dist2: f64 = p.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (dist2, i)
            })
            .collect();
        let k = self.k;
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
        }
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d
    }

    fn weights(&self, nb: &[(f64, usize)]) -> Vec<f64> {
        if nb[0].0 == 0.0 {
            return nb.iter().map(|(d, _)| if *d == 0.0 { 1.0 } else { 0.0 }).collect();
        }
        if !self.weighted {
            return vec![1.0; nb.len()];
        }
        nb.iter().map(|(d2, _)| 1.0 / d2.sqrt()).collect()
    }

    pub fn predict(&self, x: &Dense) -> Vec<f64> {
        let width = self.n_classes.max(1);
        let mut out = Vec::with_capacity(x.rows * width);
        for i in 0..x.rows {
            let nb = self.neighbours(x.row(i));
            let w = self.weights(&nb);
            let total: f64 = w.iter().sum();
            if self.n_classes == 0 {
                let s: f64 = nb.iter().zip(&w).map(|((_, j), w)| w * self.values[*j]).sum();
                out.push(s / total);
            } else {
                let mut p = vec![0.0; self.n_classes];
                for ((_, j), w) in nb.iter().zip(&w) {
                    p[self.values[*j] as usize] += w;
                }
                out.extend(p.into_iter().map(|v| v / total));
            }
        }
        out
    }
}
