//! Binary split trees shared by CART, the random forest and boosting.
//!
//! The builder is generic over a [`Criterion`]: CART regression uses the
//! squared-error reduction, CART classification the Gini reduction, and
//! boosting the second-order structure score `G^2 / (H + lambda)`.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Dense;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub(crate) enum Node {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    #[cfg(test)]
    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                value.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }
}

pub(crate) trait Criterion {
    type Acc: Clone;
    fn empty(&self) -> Self::Acc;
    fn add(&self, acc: &mut Self::Acc, row: usize);
    fn sub(&self, acc: &mut Self::Acc, row: usize);
    /// Node quality; split gain is `score(left) + score(right) - score(parent)`.
    fn score(&self, acc: &Self::Acc) -> f64;
    fn leaf(&self, acc: &Self::Acc) -> Vec<f64>;
    fn pure(&self, rows: &[usize]) -> bool;
    fn child_ok(&self, _acc: &Self::Acc) -> bool {
        true
    }
    /// Gain a split must exceed.
    fn min_gain(&self) -> f64 {
        0.0
    }
}

pub(crate) struct SquaredError<'a> {
    pub y: &'a [f64],
}

impl Criterion for SquaredError<'_> {
    type Acc = (f64, usize);
    fn empty(&self) -> Self::Acc {
        (0.0, 0)
    }
    fn add(&self, acc: &mut Self::Acc, row: usize) {
        acc.0 += self.y[row];
        acc.1 += 1;
    }
    fn sub(&self, acc: &mut Self::Acc, row: usize) {
        acc.0 -= self.y[row];
        acc.1 -= 1;
    }
    fn score(&self, acc: &Self::Acc) -> f64 {
        if acc.1 == 0 {
            0.0
        } else {
            acc.0 * acc.0 / acc.1 as f64
        }
    }
    fn leaf(&self, acc: &Self::Acc) -> Vec<f64> {
        vec![acc.0 / acc.1 as f64]
    }
    fn pure(&self, rows: &[usize]) -> bool {
        let first = self.y[rows[0]];
        rows.iter().all(|&r| self.y[r] == first)
    }
}

pub(crate) struct Gini<'a> {
    pub y: &'a [usize],
    pub n_classes: usize,
}

impl Criterion for Gini<'_> {
    type Acc = (Vec<f64>, usize);
    fn empty(&self) -> Self::Acc {
        (vec![0.0; self.n_classes], 0)
    }
    fn add(&self, acc: &mut Self::Acc, row: usize) {
        acc.0[self.y[row]] += 1.0;
        acc.1 += 1;
    }
    fn sub(&self, acc: &mut Self::Acc, row: usize) {
        acc.0[self.y[row]] -= 1.0;
        acc.1 -= 1;
    }
    fn score(&self, acc: &Self::Acc) -> f64 {
        if acc.1 == 0 {
            0.0
        } else {
            acc.0.iter().map(|c| c * c).sum::<f64>() / acc.1 as f64
        }
    }
    fn leaf(&self, acc: &Self::Acc) -> Vec<f64> {
        let n = acc.1 as f64;
        acc.0.iter().map(|c| c / n).collect()
    }
    fn pure(&self, rows: &[usize]) -> bool {
        let first = self.y[rows[0]];
        rows.iter().all(|&r| self.y[r] == first)
    }
}

/// Second-order criterion for boosting: gradient `g`, hessian `h`.
pub(crate) struct Newton<'a> {
    pub g: &'a [f64],
    pub h: &'a [f64],
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Criterion for Newton<'_> {
    type Acc = (f64, f64);
    fn empty(&self) -> Self::Acc {
        (0.0, 0.0)
    }
    fn add(&self, acc: &mut Self::Acc, row: usize) {
        acc.0 += self.g[row];
        acc.1 += self.h[row];
    }
    fn sub(&self, acc: &mut Self::Acc, row: usize) {
        acc.0 -= self.g[row];
        acc.1 -= self.h[row];
    }
    fn score(&self, acc: &Self::Acc) -> f64 {
        0.5 * acc.0 * acc.0 / (acc.1 + self.lambda)
    }
    fn leaf(&self, acc: &Self::Acc) -> Vec<f64> {
        vec![-acc.0 / (acc.1 + self.lambda)]
    }
    fn pure(&self, rows: &[usize]) -> bool {
        rows.iter().all(|&r| self.g[r] == 0.0)
    }
    fn child_ok(&self, acc: &Self::Acc) -> bool {
        acc.1 >= self.min_child_weight
    }
    fn min_gain(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Number of candidate features per node; `None` uses all, in order.
    pub max_features: Option<usize>,
}

pub(crate) fn grow<C: Criterion>(
    x: &Dense,
    rows: Vec<usize>,
    crit: &C,
    params: &GrowParams,
    features: &[usize],
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow_node(x, rows, crit, params, features, rng, 0, &mut tree.nodes);
    tree
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[allow(clippy::too_many_arguments)]
fn grow_node<C: Criterion>(
    x: &Dense,
    mut rows: Vec<usize>,
    crit: &C,
    params: &GrowParams,
    features: &[usize],
    rng: &mut ChaCha8Rng,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut total = crit.empty();
    for &r in &rows {
        crit.add(&mut total, r);
    }
    let id = nodes.len();
    nodes.push(Node::Leaf {
        value: crit.leaf(&total),
    });

    let depth_ok = params.max_depth.is_none_or(|d| depth < d);
    if !depth_ok || rows.len() < params.min_samples_split.max(2) || crit.pure(&rows) {
        return id;
    }

    let candidates: Vec<usize> = match params.max_features {
        Some(m) if m < features.len() => {
            let mut picked: Vec<usize> = sample(rng, features.len(), m)
                .into_iter()
                .map(|i| features[i])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => features.to_vec(),
    };

    let parent_score = crit.score(&total);
    let tol = 1e-12 * parent_score.abs().max(1.0);
    let mut best: Option<BestSplit> = None;
    let n = rows.len();
    let min_leaf = params.min_samples_leaf.max(1);
    for &f in &candidates {
        rows.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut left = crit.empty();
        let mut right = total.clone();
        for i in 0..n - 1 {
            let r = rows[i];
            crit.add(&mut left, r);
            crit.sub(&mut right, r);
            let (lo, hi) = (x.get(r, f), x.get(rows[i + 1], f));
            if lo == hi || i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            if !crit.child_ok(&left) || !crit.child_ok(&right) {
                continue;
            }
            let gain = crit.score(&left) + crit.score(&right) - parent_score;
            if gain > crit.min_gain() + tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = 0.5 * (lo + hi);
                let threshold = if mid < hi { mid } else { lo };
                best = Some(BestSplit {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
    }

    let Some(split) = best else {
        return id;
    };
    let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&r| x.get(r, split.feature) <= split.threshold);
    let left = grow_node(x, l_rows, crit, params, features, rng, depth + 1, nodes);
    let right = grow_node(x, r_rows, crit, params, features, rng, depth + 1, nodes);
    nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;

    fn dense(rows: &[&[f64]]) -> Dense {
        Dense {
            rows: rows.len(),
            cols: rows[0].len(),
            data: rows.concat(),
        }
    }

    #[test]
    fn unbounded_regression_tree_memorizes_distinct_rows() {
        let x = dense(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let y = [3.0, -1.0, 2.0, 2.0, 7.5];
        let params = GrowParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        };
        let t = grow(&x, (0..5).collect(), &SquaredError { y: &y }, &params, &[0], &mut rng(0));
        for (i, &target) in y.iter().enumerate() {
            assert_eq!(t.leaf_value(x.row(i)), &[target]);
        }
    }

    #[test]
    fn depth_zero_is_a_single_leaf() {
        let x = dense(&[&[0.0], &[1.0]]);
        let y = [0.0, 2.0];
        let params = GrowParams {
            max_depth: Some(0),
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        };
        let t = grow(&x, vec![0, 1], &SquaredError { y: &y }, &params, &[0], &mut rng(0));
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.leaf_value(&[5.0]), &[1.0]);
    }

    #[test]
    fn gini_leaves_are_distributions() {
        let x = dense(&[&[0.0], &[0.0], &[1.0], &[1.0]]);
        let y = [0usize, 1, 1, 1];
        let params = GrowParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        };
        let t = grow(
            &x,
            (0..4).collect(),
            &Gini { y: &y, n_classes: 2 },
            &params,
            &[0],
            &mut rng(0),
        );
        assert_eq!(t.leaf_value(&[0.0]), &[0.5, 0.5]);
        assert_eq!(t.leaf_value(&[1.0]), &[0.0, 1.0]);
    }
}
