//! End-to-end experiment: split, fit every learner family on both
//! endpoints, build the competing dose recommenders and score them against
//! the generator's oracle on the retention split.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use opiaid_learners::{predict, Family, FeatureMatrix, FittedModel, Hyper, LearnerKind, Task};

use crate::baselines::{proxy_marker_score, random_dose, rule_based_optimal_dose, LosRecommender, ProxyReport, RuleTable};
use crate::cadr::{design_columns, design_row, fit_cadr, CadrConfig, CadrModel, EndpointSpec};
use crate::diagnostics::{overlap_diagnostic, DiagnosticsContext, OverlapConfig, OverlapReport};
use crate::domain::{orade_severity, DoseGrid, EncounterRecord, PainTimepoint, UtilityWeights};
use crate::recommendation::recommend_dose;
use crate::synthgen::{true_optimal_dose, ScmGroundTruth};
use crate::validation::{
    detect_overfit, evaluate_methods, metric_accuracy, metric_auc, metric_rmse, select,
    EndpointMetrics, Evaluation, Method, MethodKind, OutcomeMetrics, Retention, Split, SplitSpec,
    DEFAULT_OVERFIT_RATIO,
};
use crate::{Error, Result};

pub const SELECTED_ID: &str = "causal_ml:selected";
pub const PROXY_ID: &str = "proxy_marker";
pub const RULE_ID: &str = "rule_based";
pub const ORACLE_ID: &str = "oracle";
pub const RANDOM_ID: &str = "random";

/// NRS at or above which pain counts as moderate for the AUC label.
pub const PAIN_AUC_THRESHOLD: f64 = 4.0;
/// Adverse-event severity above which the AUC label is positive.
pub const ORADE_AUC_THRESHOLD: f64 = 10.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scm: ScmGroundTruth,
    pub n: usize,
    pub split: SplitSpec,
    pub families: Vec<Family>,
    /// Hyperparameter overrides per family name, applied to both endpoints.
    #[serde(default)]
    pub hyper: BTreeMap<String, Hyper>,
    pub weights: UtilityWeights,
    pub grid: DoseGrid,
    pub learner_seed: u64,
    #[serde(default)]
    pub pain_target: PainTimepoint,
    #[serde(default)]
    pub overlap: OverlapConfig,
    #[serde(default)]
    pub rule_table: RuleTable,
    pub proxy_learner: LearnerKind,
    #[serde(default)]
    pub include_oracle: bool,
    /// Adds a seeded uniformly random dose as a reference method.
    #[serde(default)]
    pub include_random: bool,
    pub overfit_ratio: f64,
    /// Grid-search each family over [`tuning_grid`] on the test split.
    /// Families with an explicit `hyper` override are not tuned.
    #[serde(default = "default_tune")]
    pub tune: bool,
}

fn default_tune() -> bool {
    true
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scm: ScmGroundTruth::default(),
            n: 2000,
            split: SplitSpec::default(),
            families: Family::ALL.to_vec(),
            hyper: BTreeMap::new(),
            weights: UtilityWeights::default(),
            grid: DoseGrid::default(),
            learner_seed: 0,
            pain_target: PainTimepoint::Arrival,
            overlap: OverlapConfig::default(),
            rule_table: RuleTable::default(),
            proxy_learner: LearnerKind::regression(Family::RandomForest),
            include_oracle: false,
            include_random: false,
            overfit_ratio: DEFAULT_OVERFIT_RATIO,
            tune: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scm.validate()?;
        self.split.validate()?;
        self.weights.validate()?;
        self.rule_table.validate()?;
        if self.families.is_empty() {
            return Err(Error::InvalidConfig("no learner families selected".into()));
        }
        if self.grid.max() > self.scm.max_dose || self.grid.min() > 0.0 {
            return Err(Error::InvalidConfig(format!(
                "grid [{}, {}] must cover generated doses [0, {}]",
                self.grid.min(),
                self.grid.max(),
                self.scm.max_dose
            )));
        }
        for key in self.hyper.keys() {
            if key.parse::<Family>().is_err() {
                return Err(Error::InvalidConfig(format!("hyper: unknown family `{key}`")));
            }
        }
        Ok(())
    }

    pub fn hyper_for(&self, family: Family) -> Hyper {
        self.hyper.get(family.as_str()).cloned().unwrap_or_default()
    }
}

/// The learner kind a family uses for an endpoint: regression where
/// supported, otherwise classification on rounded targets.
pub fn endpoint_kind(family: Family) -> LearnerKind {
    if family.supports(Task::Regression) {
        LearnerKind::regression(family)
    } else {
        LearnerKind::classification(family)
    }
}

/// Candidate hyperparameters per family; the first entry is the learner's
/// defaults.
pub fn tuning_grid(family: Family) -> Vec<Hyper> {
    let h = Hyper::new;
    let mut grid = vec![h()];
    grid.extend(match family {
        Family::MultinomialLogistic => vec![h().with("l2", 1e-2)],
        Family::Knn => vec![h().with("k", 5.0), h().with("k", 30.0)],
        Family::DecisionTree => vec![h().with("max_depth", 5.0), h().with("max_depth", 12.0)],
        Family::RandomForest => vec![h().with("min_samples_leaf", 10.0)],
        Family::GradientBoostedTrees => vec![
            h().with("max_depth", 3.0).with("n_rounds", 400.0),
            h().with("max_depth", 6.0),
        ],
        Family::Mlp => vec![h().with("hidden1", 64.0).with("hidden2", 32.0)],
        Family::LinearSvm => vec![h().with("lambda", 1e-3)],
        Family::GaussianNaiveBayes => vec![h().with("var_smoothing", 0.1)],
    });
    grid
}

pub fn causal_id(family: Family) -> String {
    format!("causal_ml:{family}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub id: String,
    pub model: CadrModel,
    pub metrics: OutcomeMetrics,
}

/// Everything fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutput {
    /// One entry per family, then the per-endpoint selection.
    pub models: Vec<TrainedModel>,
    pub proxy: LosRecommender,
    pub overlap: OverlapReport,
}

impl TrainingOutput {
    pub fn diagnostics(&self) -> DiagnosticsContext {
        DiagnosticsContext {
            overlap: Some(self.overlap.clone()),
        }
    }

    pub fn model(&self, id: &str) -> Option<&TrainedModel> {
        self.models.iter().find(|m| m.id == id)
    }
}

fn endpoint_metrics(
    model: &FittedModel,
    x: &FeatureMatrix,
    truth: &[f64],
    auc_label: impl Fn(f64) -> bool,
    overfit_ratio: f64,
) -> Result<EndpointMetrics> {
    let pred: Vec<f64> = predict(model, x)?
        .expected_values()
        .into_iter()
        .map(|v| v.clamp(0.0, 10.0))
        .collect();
    let rounded_pred: Vec<f64> = pred.iter().map(|v| v.round()).collect();
    let rounded_truth: Vec<f64> = truth.iter().map(|v| v.round()).collect();
    let labels: Vec<bool> = truth.iter().map(|&v| auc_label(v)).collect();
    let auc = match metric_auc(&pred, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(EndpointMetrics {
        rmse: metric_rmse(&pred, truth)?,
        accuracy: metric_accuracy(&rounded_pred, &rounded_truth)?,
        auc,
        overfit: detect_overfit(model.loss_curve(), overfit_ratio),
    })
}

fn outcome_metrics(model: &CadrModel, test: &[EncounterRecord], cfg: &ExperimentConfig) -> Result<OutcomeMetrics> {
    let x = FeatureMatrix::new(
        design_columns(&model.registry, model.n_surgery_types),
        test.iter()
            .flat_map(|r| design_row(r.treatment, r.administered_dose, &r.features))
            .collect(),
    )?;
    let pain: Vec<f64> = test.iter().map(|r| r.pain(cfg.pain_target).nrs() as f64).collect();
    let orade = test
        .iter()
        .map(|r| orade_severity(&r.orades, &cfg.scm.orade_weights))
        .collect::<Result<Vec<f64>>>()?;
    Ok(OutcomeMetrics {
        pain: endpoint_metrics(&model.pain_model, &x, &pain, |v| v >= PAIN_AUC_THRESHOLD, cfg.overfit_ratio)?,
        orade: endpoint_metrics(&model.orade_model, &x, &orade, |v| v > ORADE_AUC_THRESHOLD, cfg.overfit_ratio)?,
    })
}

fn cadr_config(cfg: &ExperimentConfig, family: Family, hyper: Hyper) -> CadrConfig {
    let kind = endpoint_kind(family);
    CadrConfig {
        pain: EndpointSpec {
            kind,
            hyper: hyper.clone(),
        },
        orade: EndpointSpec { kind, hyper },
        grid: cfg.grid,
        seed: cfg.learner_seed,
        pain_target: cfg.pain_target,
        orade_weights: cfg.scm.orade_weights.clone(),
        registry: cfg.scm.registry.clone(),
        n_surgery_types: cfg.scm.n_surgery_types(),
    }
}

fn candidates(cfg: &ExperimentConfig, family: Family) -> Vec<Hyper> {
    match cfg.hyper.get(family.as_str()) {
        Some(h) => vec![h.clone()],
        None if cfg.tune => tuning_grid(family),
        None => vec![Hyper::new()],
    }
}

/// Fits one family, choosing each endpoint's hyperparameters by test RMSE
/// (ties keep the earlier candidate).
fn fit_family(
    train: &[EncounterRecord],
    test: &[EncounterRecord],
    cfg: &ExperimentConfig,
    family: Family,
) -> Result<TrainedModel> {
    let fits = candidates(cfg, family)
        .into_par_iter()
        .map(|hyper| {
            let model = fit_cadr(train, &cadr_config(cfg, family, hyper))?;
            let metrics = outcome_metrics(&model, test, cfg)?;
            Ok((model, metrics))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = |key: fn(&OutcomeMetrics) -> f64| {
        fits.iter()
            .reduce(|a, b| if key(&b.1) < key(&a.1) { b } else { a })
            .expect("at least one candidate")
    };
    let (pain, orade) = (best(|m| m.pain.rmse), best(|m| m.orade.rmse));
    let mut model = pain.0.clone();
    model.orade_model = orade.0.orade_model.clone();
    Ok(TrainedModel {
        id: causal_id(family),
        model,
        metrics: OutcomeMetrics {
            pain: pain.1.pain,
            orade: orade.1.orade,
        },
    })
}

/// Fits every family, the per-endpoint selection (lowest test RMSE for each
/// endpoint), the length-of-stay recommender and the overlap diagnostic.
pub fn train_stage(records: &[EncounterRecord], split: &Split, cfg: &ExperimentConfig) -> Result<TrainingOutput> {
    cfg.validate()?;
    let train = select(records, &split.train);
    let test = select(records, &split.test);

    let mut models = cfg
        .families
        .par_iter()
        .map(|&family| fit_family(&train, &test, cfg, family))
        .collect::<Result<Vec<_>>>()?;

    let best = |key: fn(&OutcomeMetrics) -> f64| {
        models
            .iter()
            .min_by(|a, b| key(&a.metrics).total_cmp(&key(&b.metrics)))
            .expect("at least one family")
    };
    let best_pain = best(|m| m.pain.rmse);
    let best_orade = best(|m| m.orade.rmse);
    let mut selected = best_pain.model.clone();
    selected.orade_model = best_orade.model.orade_model.clone();
    let selected = TrainedModel {
        id: SELECTED_ID.into(),
        model: selected,
        metrics: OutcomeMetrics {
            pain: best_pain.metrics.pain,
            orade: best_orade.metrics.orade,
        },
    };
    models.push(selected);

    let proxy = LosRecommender::fit(
        &train,
        cfg.grid,
        &cfg.scm.registry,
        cfg.scm.n_surgery_types(),
        cfg.proxy_learner,
        &cfg.hyper_for(cfg.proxy_learner.family),
        cfg.learner_seed,
    )?;
    let overlap = overlap_diagnostic(&train, &cfg.grid, cfg.overlap)?;
    Ok(TrainingOutput {
        models,
        proxy,
        overlap,
    })
}

/// The dose recommenders compared in evaluation.
pub fn methods<'a>(out: &'a TrainingOutput, cfg: &'a ExperimentConfig) -> Vec<Method<'a>> {
    let ctx = DiagnosticsContext::default();
    let w = cfg.weights;
    let mut methods: Vec<Method<'a>> = out
        .models
        .iter()
        .map(|m| {
            let ctx = ctx.clone();
            Method::new(m.id.clone(), MethodKind::CausalMl, move |r: &EncounterRecord| {
                Ok(recommend_dose(&m.model, &r.features, r.treatment, w, &ctx)?.dose_meq)
            })
            .with_metrics(m.metrics)
        })
        .collect();
    methods.push(Method::new(PROXY_ID, MethodKind::ProxyMarker, move |r: &EncounterRecord| {
        out.proxy.recommend(r.treatment, &r.features)
    }));
    methods.push(Method::new(RULE_ID, MethodKind::RuleBased, move |r: &EncounterRecord| {
        Ok(rule_based_optimal_dose(r.administered_dose, r.pain_arrival, &r.orades, &cfg.rule_table)?.0)
    }));
    if cfg.include_oracle {
        methods.push(Method::new(ORACLE_ID, MethodKind::Oracle, move |r: &EncounterRecord| {
            Ok(true_optimal_dose(&cfg.scm, &r.features, r.treatment, &cfg.grid, w).0)
        }));
    }
    if cfg.include_random {
        methods.push(Method::new(RANDOM_ID, MethodKind::Random, move |r: &EncounterRecord| {
            Ok(random_dose(&cfg.grid, cfg.learner_seed, r.case_id))
        }));
    }
    methods
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub evaluation: Evaluation,
    /// Proxy-marker association of each method on the retention cases.
    pub proxy: BTreeMap<String, ProxyReport>,
}

/// Scores all methods on the retention split, consuming it.
pub fn evaluate_stage(
    records: &[EncounterRecord],
    retention: Retention,
    out: &TrainingOutput,
    cfg: &ExperimentConfig,
) -> Result<EvaluationOutput> {
    let cases = select(records, &retention.open());
    let methods = methods(out, cfg);
    let evaluation = evaluate_methods(&cases, &methods, &cfg.scm, &cfg.grid, cfg.weights)?;
    let proxy = methods
        .par_iter()
        .map(|m| Ok((m.id.clone(), proxy_marker_score(&cases, &m.recommend)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(EvaluationOutput { evaluation, proxy })
}

/// Generation, training and evaluation in one call.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(TrainingOutput, EvaluationOutput)> {
    cfg.validate()?;
    let cohort = crate::synthgen::generate_cohort(&cfg.scm, cfg.n)?;
    let split = crate::validation::split(cohort.records.len(), &cfg.split)?;
    let trained = train_stage(&cohort.records, &split, cfg)?;
    let evaluated = evaluate_stage(&cohort.records, split.retention, &trained, cfg)?;
    Ok((trained, evaluated))
}
