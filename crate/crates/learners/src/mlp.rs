//! Fully connected network with rectifier hidden layers.
//!
//! Regression uses squared error on a standardized target; classification
//! uses softmax cross-entropy. Training is mini-batch Adam with an
//! epoch-level guard: an epoch that raises the full training objective is
//! rolled back and the step size halved, so the recorded training loss never
//! increases.
//!
//! Hyperparameters: `hidden1` (32), `hidden2` (16, 0 = one hidden layer),
//! `learning_rate` (0.01), `epochs` (150), `batch_size` (32), `l2` (0.0).

use std::ops::Range;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::{softmax, LossPoint, OwnedTarget, Target};
use crate::rng::{holdout_split, rng, sub_seed};
use crate::{Hyper, Result, Task};

const KEYS: &[&str] = &[
    "hidden1",
    "hidden2",
    "learning_rate",
    "epochs",
    "batch_size",
    "l2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Head {
    /// Single linear output predicting `(y - mean) / sd`.
    Linear { y_mean: f64, y_sd: f64 },
    /// Logits over classes.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `weights[l]` is `sizes[l + 1] x sizes[l]`, row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    head: Head,
}

impl Mlp {
    /// He-initialized network. `sizes` lists input, hidden and output widths.
    pub fn new(sizes: &[usize], task: Task, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut net = Self::zeros(sizes, task);
        for (l, w) in net.weights.iter_mut().enumerate() {
            let normal = Normal::new(0.0, (2.0 / sizes[l] as f64).sqrt()).expect("valid sd");
            w.iter_mut().for_each(|v| *v = normal.sample(&mut r));
        }
        net
    }

    pub fn zeros(sizes: &[usize], task: Task) -> Self {
        assert!(sizes.len() >= 2, "need input and output layers");
        let weights = sizes.windows(2).map(|s| vec![0.0; s[0] * s[1]]).collect();
        let biases = sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let head = match task {
            Task::Regression => Head::Linear {
                y_mean: 0.0,
                y_sd: 1.0,
            },
            Task::Classification => Head::Softmax,
        };
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            head,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.param_groups().last().map_or(0, |r| r.end)
    }

    /// Index ranges of each weight matrix and bias vector in [`Mlp::params`].
    pub fn param_groups(&self) -> Vec<Range<usize>> {
        let mut groups = Vec::new();
        let mut at = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            groups.push(at..at + w.len());
            at += w.len();
            groups.push(at..at + b.len());
            at += b.len();
        }
        groups
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w);
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[at..at + nw]);
            at += nw;
            b.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Pre-activations and activations of every layer for one input row.
    fn forward(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![input.to_vec()];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < self.n_layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(z.len(), n_out);
            acts.push(z);
        }
        acts
    }

    /// Raw network output (standardized value or logits).
    pub fn output(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).pop().expect("output layer")
    }

    fn row_loss(&self, out: &[f64], target: f64) -> f64 {
        match self.head {
            Head::Linear { .. } => 0.5 * (out[0] - target).powi(2),
            Head::Softmax => {
                let mut p = out.to_vec();
                softmax(&mut p);
                -p[target as usize].max(1e-300).ln()
            }
        }
    }

    /// Mean loss over rows. Regression targets are in the network's output
    /// space; classification targets are class indices.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
        inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| self.row_loss(&self.output(x), t))
            .sum::<f64>()
            / inputs.len() as f64
    }

    /// Analytic gradient of [`Mlp::loss`], flattened like [`Mlp::params`].
    pub fn gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        self.batch_gradient(&rows, targets)
    }

    fn batch_gradient(&self, inputs: &[&[f64]], targets: &[f64]) -> Vec<f64> {
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let scale = 1.0 / inputs.len() as f64;
        for (x, &t) in inputs.iter().zip(targets) {
            let acts = self.forward(x);
            let out = acts.last().expect("output");
            let mut delta: Vec<f64> = match self.head {
                Head::Linear { .. } => vec![out[0] - t],
                Head::Softmax => {
                    let mut p = out.clone();
                    softmax(&mut p);
                    p[t as usize] -= 1.0;
                    p
                }
            };
            for l in (0..self.n_layers()).rev() {
                let n_in = self.sizes[l];
                let prev = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    gb[l][o] += scale * d;
                    let g = &mut gw[l][o * n_in..(o + 1) * n_in];
                    for (gi, a) in g.iter_mut().zip(prev) {
                        *gi += scale * d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let w = &self.weights[l];
                let mut next = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    for (i, nv) in next.iter_mut().enumerate() {
                        *nv += w[o * n_in + i] * d;
                    }
                }
                // ReLU derivative, taken as 0 at the kink.
                for (nv, a) in next.iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *nv = 0.0;
                    }
                }
                delta = next;
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (w, b) in gw.into_iter().zip(gb) {
            flat.extend(w);
            flat.extend(b);
        }
        flat
    }

    fn l2_penalty(&self, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        0.5 * l2 * self.weights.iter().flatten().map(|w| w * w).sum::<f64>()
    }

    pub(crate) fn predict(&self, x: &Dense) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.rows * self.sizes[self.sizes.len() - 1]);
        for i in 0..x.rows {
            let mut o = self.output(x.row(i));
            match self.head {
                Head::Linear { y_mean, y_sd } => out.push(o[0] * y_sd + y_mean),
                Head::Softmax => {
                    softmax(&mut o);
                    out.extend(o);
                }
            }
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

pub(crate) fn fit(x: &Dense, target: &Target, hyper: &Hyper, seed: u64) -> Result<(Mlp, Vec<LossPoint>)> {
    hyper.check_keys(KEYS)?;
    let hidden1 = hyper.count("hidden1", 32)?;
    let hidden2 = hyper.non_negative("hidden2", 16.0)? as usize;
    let mut lr = hyper.positive("learning_rate", 0.01)?;
    let epochs = hyper.count("epochs", 150)?;
    let batch = hyper.count("batch_size", 32)?;
    let l2 = hyper.non_negative("l2", 0.0)?;

    let (fit_rows, val_rows) = holdout_split(x.rows, seed);
    let (task, out_dim) = match target {
        Target::Values(_) => (Task::Regression, 1),
        Target::Classes { k, .. } => (Task::Classification, *k),
    };
    let mut sizes = vec![x.cols, hidden1];
    if hidden2 > 0 {
        sizes.push(hidden2);
    }
    sizes.push(out_dim);
    let mut net = Mlp::new(&sizes, task, sub_seed(seed, 0x4D4C50));

    // Targets in the network's output space.
    let encode_targets = |rows: &[usize], net: &Mlp| -> Vec<f64> {
        match (target, &net.head) {
            (Target::Values(y), Head::Linear { y_mean, y_sd }) => {
                rows.iter().map(|&i| (y[i] - y_mean) / y_sd).collect()
            }
            (Target::Classes { y, .. }, _) => rows.iter().map(|&i| y[i] as f64).collect(),
            _ => unreachable!("head matches task"),
        }
    };
    if let OwnedTarget::Values(y) = target.select(&fit_rows) {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        net.head = Head::Linear {
            y_mean: mean,
            y_sd: if var > 1e-24 { var.sqrt() } else { 1.0 },
        };
    }
    let fit_t = encode_targets(&fit_rows, &net);
    let val_t = encode_targets(&val_rows, &net);
    let fit_x: Vec<&[f64]> = fit_rows.iter().map(|&i| x.row(i)).collect();
    let val_x: Vec<&[f64]> = val_rows.iter().map(|&i| x.row(i)).collect();

    let objective = |net: &Mlp| -> f64 {
        let data = fit_x
            .iter()
            .zip(&fit_t)
            .map(|(r, &t)| net.row_loss(&net.output(r), t))
            .sum::<f64>()
            / fit_x.len() as f64;
        data + net.l2_penalty(l2)
    };
    let val_loss = |net: &Mlp| -> Option<f64> {
        (!val_x.is_empty()).then(|| {
            val_x
                .iter()
                .zip(&val_t)
                .map(|(r, &t)| net.row_loss(&net.output(r), t))
                .sum::<f64>()
                / val_x.len() as f64
        })
    };

    let mut shuffle_rng = rng(sub_seed(seed, 0x5348));
    let mut order: Vec<usize> = (0..fit_x.len()).collect();
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut best = objective(&net);
    let mut best_val = val_loss(&net);
    let mut curve = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let snapshot = (params.clone(), adam.m.clone(), adam.v.clone(), adam.t);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| fit_x[i]).collect();
            let ts: Vec<f64> = chunk.iter().map(|&i| fit_t[i]).collect();
            let mut g = net.batch_gradient(&xs, &ts);
            if l2 > 0.0 {
                for (range, w) in net.param_groups().iter().step_by(2).zip(&net.weights) {
                    for (gi, wi) in g[range.clone()].iter_mut().zip(w) {
                        *gi += l2 * wi;
                    }
                }
            }
            adam.step(&mut params, &g, lr);
            net.set_params(&params);
        }
        let obj = objective(&net);
        if obj <= best {
            best = obj;
            best_val = val_loss(&net);
        } else {
            (params, adam.m, adam.v, adam.t) = snapshot;
            net.set_params(&params);
            lr *= 0.5;
        }
        curve.push(LossPoint {
            round: epoch + 1,
            train_loss: best,
            validation_loss: best_val,
        });
    }
    Ok((net, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip_through_flat_vector() {
        let mut net = Mlp::new(&[3, 4, 2], Task::Classification, 9);
        let p = net.params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_params(&shifted);
        assert_eq!(net.params(), shifted);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[2, 3, 1], Task::Regression);
        assert_eq!(net.output(&[1.0, -2.0]), vec![0.0]);
    }
}
