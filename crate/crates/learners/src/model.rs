//! Learner registry, fitted-model container and the `train` / `predict`
//! entry points.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::matrix::{Dense, FeatureMatrix};
use crate::schema::FeatureSchema;
use crate::{bayes, boosting, forest, knn, logistic, mlp, svm, tree};
use crate::{Hyper, LearnerError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MultinomialLogistic,
    Knn,
    DecisionTree,
    RandomForest,
    GradientBoostedTrees,
    Mlp,
    LinearSvm,
    GaussianNaiveBayes,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::MultinomialLogistic,
        Family::Knn,
        Family::DecisionTree,
        Family::RandomForest,
        Family::GradientBoostedTrees,
        Family::Mlp,
        Family::LinearSvm,
        Family::GaussianNaiveBayes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::MultinomialLogistic => "multinomial_logistic",
            Family::Knn => "knn",
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::GradientBoostedTrees => "gradient_boosted_trees",
            Family::Mlp => "mlp",
            Family::LinearSvm => "linear_svm",
            Family::GaussianNaiveBayes => "gaussian_naive_bayes",
        }
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            Family::MultinomialLogistic | Family::GaussianNaiveBayes => {
                task == Task::Classification
            }
            _ => true,
        }
    }

    /// Learners that optimize over epochs/rounds and record a loss curve.
    pub fn is_iterative(self) -> bool {
        matches!(
            self,
            Family::MultinomialLogistic
                | Family::GradientBoostedTrees
                | Family::Mlp
                | Family::LinearSvm
        )
    }

    pub fn is_ensemble(self) -> bool {
        self == Family::RandomForest
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown learner family {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LearnerKind {
    pub family: Family,
    pub task: Task,
}

impl LearnerKind {
    pub fn new(family: Family, task: Task) -> Self {
        Self { family, task }
    }

    pub fn regression(family: Family) -> Self {
        Self::new(family, Task::Regression)
    }

    pub fn classification(family: Family) -> Self {
        Self::new(family, Task::Classification)
    }
}

/// One epoch (or boosting round) of an iterative learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub round: usize,
    pub train_loss: f64,
    /// `None` when the data was too small for a validation split.
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub hyper: Hyper,
    pub n_rows: usize,
    /// SHA-256 over column names, feature values and targets.
    pub data_hash: String,
    /// Mean and standard deviation of in-sample residuals (regression only).
    pub residual_mean: Option<f64>,
    pub residual_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub(crate) enum Params {
    MultinomialLogistic(logistic::Logistic),
    Knn(knn::Knn),
    DecisionTree(tree::Tree),
    RandomForest(forest::Forest),
    GradientBoostedTrees(boosting::Boosting),
    Mlp(mlp::Mlp),
    LinearSvm(svm::LinearSvm),
    GaussianNaiveBayes(bayes::GaussianNb),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    kind: LearnerKind,
    /// Sorted class values for classification; empty for regression.
    classes: Vec<f64>,
    feature_schema: FeatureSchema,
    pub(crate) params: Params,
    loss_curve: Vec<LossPoint>,
    train_meta: TrainMeta,
}

impl FittedModel {
    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn classes(&self) -> &[f64] {
        &self.classes
    }

    pub fn feature_schema(&self) -> &FeatureSchema {
        &self.feature_schema
    }

    pub fn loss_curve(&self) -> &[LossPoint] {
        &self.loss_curve
    }

    pub fn train_meta(&self) -> &TrainMeta {
        &self.train_meta
    }

    /// The network of an `mlp` model, for gradient checking.
    pub fn mlp(&self) -> Option<&mlp::Mlp> {
        match &self.params {
            Params::Mlp(m) => Some(m),
            _ => None,
        }
    }

    fn out_dim(&self) -> usize {
        match self.kind.task {
            Task::Regression => 1,
            Task::Classification => self.classes.len(),
        }
    }
}

/// Model output for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Values(Vec<f64>),
    Probabilities { classes: Vec<f64>, rows: Vec<Vec<f64>> },
}

impl Prediction {
    pub fn len(&self) -> usize {
        match self {
            Prediction::Values(v) => v.len(),
            Prediction::Probabilities { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Regression values, or the expectation of the class value under the
    /// predicted distribution.
    pub fn expected_values(&self) -> Vec<f64> {
        match self {
            Prediction::Values(v) => v.clone(),
            Prediction::Probabilities { classes, rows } => rows
                .iter()
                .map(|p| p.iter().zip(classes).map(|(p, c)| p * c).sum())
                .collect(),
        }
    }

    /// Most probable class per row (lowest class value on ties).
    pub fn argmax_classes(&self) -> Option<Vec<f64>> {
        match self {
            Prediction::Values(_) => None,
            Prediction::Probabilities { classes, rows } => Some(
                rows.iter()
                    .map(|p| {
                        let mut best = 0;
                        for (k, &pk) in p.iter().enumerate() {
                            if pk > p[best] {
                                best = k;
                            }
                        }
                        classes[best]
                    })
                    .collect(),
            ),
        }
    }
}

pub(crate) enum Target<'a> {
    Values(&'a [f64]),
    Classes { y: &'a [usize], k: usize },
}

impl Target<'_> {
    pub fn select(&self, idx: &[usize]) -> OwnedTarget {
        match self {
            Target::Values(v) => OwnedTarget::Values(idx.iter().map(|&i| v[i]).collect()),
            Target::Classes { y, k } => OwnedTarget::Classes {
                y: idx.iter().map(|&i| y[i]).collect(),
                k: *k,
            },
        }
    }
}

pub(crate) enum OwnedTarget {
    Values(Vec<f64>),
    Classes { y: Vec<usize>, k: usize },
}

impl OwnedTarget {
    pub fn view(&self) -> Target<'_> {
        match self {
            OwnedTarget::Values(v) => Target::Values(v),
            OwnedTarget::Classes { y, k } => Target::Classes { y, k: *k },
        }
    }
}

fn data_hash(x: &FeatureMatrix, y: &[f64]) -> String {
    let mut h = Sha256::new();
    for c in x.columns() {
        h.update(c.name.as_bytes());
        h.update([0u8]);
    }
    for v in x.data().iter().chain(y) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Fits one learner. Deterministic in `(kind, features, targets, hyper, seed)`.
pub fn train(
    kind: LearnerKind,
    features: &FeatureMatrix,
    targets: &[f64],
    hyper: &Hyper,
    seed: u64,
) -> Result<FittedModel> {
    let n = features.n_rows();
    if n < 2 {
        return Err(LearnerError::TooFewRows { min: 2, got: n });
    }
    if targets.len() != n {
        return Err(LearnerError::DimensionMismatch(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFinite("targets"));
    }
    if !kind.family.supports(kind.task) {
        return Err(LearnerError::UnsupportedTask {
            family: kind.family.to_string(),
            task: kind.task.to_string(),
        });
    }

    let schema = FeatureSchema::fit(features)?;
    let x = schema.encode(features)?;

    let (classes, class_idx) = match kind.task {
        Task::Regression => (Vec::new(), Vec::new()),
        Task::Classification => {
            let mut classes = targets.to_vec();
            classes.sort_by(f64::total_cmp);
            classes.dedup();
            if classes.len() < 2 {
                return Err(LearnerError::DegenerateTarget(classes[0]));
            }
            let idx = targets
                .iter()
                .map(|t| classes.partition_point(|c| c < t))
                .collect();
            (classes, idx)
        }
    };
    let target = match kind.task {
        Task::Regression => Target::Values(targets),
        Task::Classification => Target::Classes {
            y: &class_idx,
            k: classes.len(),
        },
    };

    let (params, loss_curve) = fit_params(kind.family, &x, &target, hyper, seed)?;
    let mut model = FittedModel {
        kind,
        classes,
        feature_schema: schema,
        params,
        loss_curve,
        train_meta: TrainMeta {
            seed,
            hyper: hyper.clone(),
            n_rows: n,
            data_hash: data_hash(features, targets),
            residual_mean: None,
            residual_sd: None,
        },
    };
    if kind.task == Task::Regression {
        let fitted = model.raw_predict(&x);
        let res: Vec<f64> = fitted.iter().zip(targets).map(|(f, y)| y - f).collect();
        let mean = res.iter().sum::<f64>() / n as f64;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        model.train_meta.residual_mean = Some(mean);
        model.train_meta.residual_sd = Some(var.sqrt());
    }
    Ok(model)
}

fn fit_params(
    family: Family,
    x: &Dense,
    target: &Target,
    hyper: &Hyper,
    seed: u64,
) -> Result<(Params, Vec<LossPoint>)> {
    Ok(match family {
        Family::MultinomialLogistic => {
            let (m, c) = logistic::fit(x, target, hyper, seed)?;
            (Params::MultinomialLogistic(m), c)
        }
        Family::Knn => (Params::Knn(knn::fit(x, target, hyper)?), Vec::new()),
        Family::DecisionTree => (
            Params::DecisionTree(forest::fit_single_tree(x, target, hyper, seed)?),
            Vec::new(),
        ),
        Family::RandomForest => (
            Params::RandomForest(forest::fit(x, target, hyper, seed)?),
            Vec::new(),
        ),
        Family::GradientBoostedTrees => {
            let (m, c) = boosting::fit(x, target, hyper, seed)?;
            (Params::GradientBoostedTrees(m), c)
        }
        Family::Mlp => {
            let (m, c) = mlp::fit(x, target, hyper, seed)?;
            (Params::Mlp(m), c)
        }
        Family::LinearSvm => {
            let (m, c) = svm::fit(x, target, hyper, seed)?;
            (Params::LinearSvm(m), c)
        }
        Family::GaussianNaiveBayes => (
            Params::GaussianNaiveBayes(bayes::fit(x, target, hyper)?),
            Vec::new(),
        ),
    })
}

impl FittedModel {
    /// Flat row-major outputs of width `out_dim`.
    fn raw_predict(&self, x: &Dense) -> Vec<f64> {
        match &self.params {
            Params::MultinomialLogistic(m) => m.predict(x),
            Params::Knn(m) => m.predict(x),
            Params::DecisionTree(t) => (0..x.rows)
                .flat_map(|i| t.leaf_value(x.row(i)).to_vec())
                .collect(),
            Params::RandomForest(m) => m.predict(x),
            Params::GradientBoostedTrees(m) => m.predict(x),
            Params::Mlp(m) => m.predict(x),
            Params::LinearSvm(m) => m.predict(x),
            Params::GaussianNaiveBayes(m) => m.predict(x),
        }
    }

    fn wrap(&self, flat: Vec<f64>) -> Prediction {
        match self.kind.task {
            Task::Regression => Prediction::Values(flat),
            Task::Classification => Prediction::Probabilities {
                classes: self.classes.clone(),
                rows: flat.chunks(self.out_dim()).map(<[f64]>::to_vec).collect(),
            },
        }
    }
}

/// Predicts a batch of rows. Each row is computed independently, so batched
/// and one-row calls agree bit for bit.
pub fn predict(model: &FittedModel, features: &FeatureMatrix) -> Result<Prediction> {
    let x = model.feature_schema.encode(features)?;
    Ok(model.wrap(model.raw_predict(&x)))
}

/// Per-member predictions of an ensemble; `None` for single models.
pub fn predict_members(
    model: &FittedModel,
    features: &FeatureMatrix,
) -> Result<Option<Vec<Prediction>>> {
    let Params::RandomForest(forest) = &model.params else {
        return Ok(None);
    };
    let x = model.feature_schema.encode(features)?;
    Ok(Some(
        forest
            .predict_members(&x)
            .into_iter()
            .map(|flat| model.wrap(flat))
            .collect(),
    ))
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}
