//! CART trees and bagged random forests.
//!
//! Hyperparameters (defaults in parentheses):
//!
//! * decision tree: `max_depth` (8, 0 = unbounded), `min_samples_leaf` (5),
//!   `min_samples_split` (2), `max_features` (1.0, fraction of encoded
//!   columns tried per node)
//! * random forest: `n_trees` (100), `max_depth` (12), `min_samples_leaf` (3),
//!   `min_samples_split` (2), `max_features` (0.6), `bootstrap` (1 = on)
//!
//! Member `i` of a forest draws from the stream `sub_seed(seed, i)`; a single
//! decision tree uses stream `0`. A one-tree forest without bootstrap is
//! therefore the same tree as a decision tree with equal settings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Dense;
use crate::model::Target;
use crate::rng::{rng, sub_seed};
use crate::tree::{grow, Gini, GrowParams, SquaredError, Tree};
use crate::{Hyper, Result};

const TREE_KEYS: &[&str] = &[
    "max_depth",
    "min_samples_leaf",
    "min_samples_split",
    "max_features",
];
const FOREST_KEYS: &[&str] = &[
    "n_trees",
    "max_depth",
    "min_samples_leaf",
    "min_samples_split",
    "max_features",
    "bootstrap",
];

fn grow_params(
    hyper: &Hyper,
    n_features: usize,
    depth: Option<usize>,
    leaf: usize,
    max_features: f64,
) -> Result<GrowParams> {
    let frac = hyper.fraction("max_features", max_features)?;
    let m = ((frac * n_features as f64).round() as usize).clamp(1, n_features);
    Ok(GrowParams {
        max_depth: hyper.depth("max_depth", depth)?,
        min_samples_split: hyper.count("min_samples_split", 2)?,
        min_samples_leaf: hyper.count("min_samples_leaf", leaf)?,
        max_features: (m < n_features).then_some(m),
    })
}

fn grow_member(
    x: &Dense,
    target: &Target,
    params: &GrowParams,
    bootstrap: bool,
    seed: u64,
) -> Tree {
    let mut r = rng(seed);
    let rows: Vec<usize> = if bootstrap {
        (0..x.rows).map(|_| r.random_range(0..x.rows)).collect()
    } else {
        (0..x.rows).collect()
    };
    let features: Vec<usize> = (0..x.cols).collect();
    match target {
        Target::Values(y) => grow(x, rows, &SquaredError { y }, params, &features, &mut r),
        Target::Classes { y, k } => grow(
            x,
            rows,
            &Gini { y, n_classes: *k },
            params,
            &features,
            &mut r,
        ),
    }
}

pub(crate) fn fit_single_tree(x: &Dense, target: &Target, hyper: &Hyper, seed: u64) -> Result<Tree> {
    hyper.check_keys(TREE_KEYS)?;
    let params = grow_params(hyper, x.cols, Some(8), 5, 1.0)?;
    Ok(grow_member(x, target, &params, false, sub_seed(seed, 0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Forest {
    trees: Vec<Tree>,
}

pub(crate) fn fit(x: &Dense, target: &Target, hyper: &Hyper, seed: u64) -> Result<Forest> {
    hyper.check_keys(FOREST_KEYS)?;
    let n_trees = hyper.count("n_trees", 100)?;
    let bootstrap = hyper.float("bootstrap", 1.0)? != 0.0;
    let params = grow_params(hyper, x.cols, Some(12), 3, 0.6)?;
    let trees = (0..n_trees)
        .map(|i| grow_member(x, target, &params, bootstrap, sub_seed(seed, i as u64)))
        .collect();
    Ok(Forest { trees })
}

impl Forest {
    pub fn predict(&self, x: &Dense) -> Vec<f64> {
        let n = self.trees.len() as f64;
        let mut out = Vec::new();
        for i in 0..x.rows {
            let row = x.row(i);
            let mut acc = self.trees[0].leaf_value(row).to_vec();
            for t in &self.trees[1..] {
                for (a, v) in acc.iter_mut().zip(t.leaf_value(row)) {
                    *a += v;
                }
            }
            out.extend(acc.into_iter().map(|a| a / n));
        }
        out
    }

    pub fn predict_members(&self, x: &Dense) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| {
                (0..x.rows)
                    .flat_map(|i| t.leaf_value(x.row(i)).to_vec())
                    .collect()
            })
            .collect()
    }
}
