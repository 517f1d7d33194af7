//! Conditional average dose-response curves.
//!
//! One outcome model per endpoint takes (treatment, dose, case features) as
//! input; sweeping the dose over a grid with the case features held fixed
//! yields the per-case dose-response curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use opiaid_learners::{
    predict, predict_members, sub_seed, train, ColumnSpec, FeatureMatrix, FittedModel, Hyper,
    LearnerKind, Prediction, Task,
};

use crate::domain::{
    orade_severity, CaseFeatures, DoseGrid, EncounterRecord, OradeWeights, PainTimepoint, Sex,
    Treatment, TreatmentRegistry, UtilityWeights,
};
use crate::recommendation::utility;
use crate::{Error, Result};

pub const CADR_ARTIFACT_VERSION: u64 = 1;

/// Input columns shared by both endpoint models.
pub fn design_columns(registry: &TreatmentRegistry, n_surgery_types: u32) -> Vec<ColumnSpec> {
    vec![
        ColumnSpec::categorical("treatment", registry.len()),
        ColumnSpec::continuous("dose_meq"),
        ColumnSpec::continuous("age"),
        ColumnSpec::continuous("weight"),
        ColumnSpec::categorical("sex", 2),
        ColumnSpec::continuous("asa_class"),
        ColumnSpec::continuous("surgery_duration"),
        ColumnSpec::categorical("surgery_type", n_surgery_types as usize),
        ColumnSpec::categorical("chronic_opioid_use", 2),
        ColumnSpec::continuous("comorbidity_score"),
    ]
}

pub fn design_row(t: Treatment, d: f64, x: &CaseFeatures) -> [f64; 10] {
    [
        t.opiate_id as f64,
        d,
        x.age as f64,
        x.weight,
        match x.sex {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
        },
        x.asa_class as f64,
        x.surgery_duration,
        x.surgery_type as f64,
        if x.chronic_opioid_use { 1.0 } else { 0.0 },
        x.comorbidity_score,
    ]
}

/// Settings for one endpoint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub hyper: Hyper,
}

impl EndpointSpec {
    pub fn new(kind: LearnerKind) -> Self {
        EndpointSpec {
            kind,
            hyper: Hyper::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadrConfig {
    pub pain: EndpointSpec,
    pub orade: EndpointSpec,
    pub grid: DoseGrid,
    pub seed: u64,
    #[serde(default)]
    pub pain_target: PainTimepoint,
    #[serde(default)]
    pub orade_weights: OradeWeights,
    #[serde(default)]
    pub registry: TreatmentRegistry,
    pub n_surgery_types: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Every training record received the same dose; dose effects are not
    /// identifiable from the data.
    OverlapDegenerate,
}

/// Range of administered doses seen in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseSupport {
    pub min: f64,
    pub max: f64,
}

impl DoseSupport {
    pub fn contains(&self, d: f64) -> bool {
        d >= self.min && d <= self.max
    }
}

/// Fitted pain and adverse-event models plus the grid they are swept over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadrModel {
    pub version: u64,
    pub pain_model: FittedModel,
    pub orade_model: FittedModel,
    pub dose_grid: DoseGrid,
    pub registry: TreatmentRegistry,
    pub n_surgery_types: u32,
    pub pain_target: PainTimepoint,
    pub dose_support: DoseSupport,
    pub warnings: Vec<FitWarning>,
}

/// Predicted outcomes at one dose, both clamped to [0, 10].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub pain: f64,
    pub orade: f64,
}

/// A per-case dose-response curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadrCurve {
    pub doses: Vec<f64>,
    pub pain_hat: Vec<f64>,
    pub orade_hat: Vec<f64>,
    pub utility: Vec<f64>,
    /// Standard deviation of member utilities, for ensemble models.
    pub spread: Option<Vec<f64>>,
}

impl CadrCurve {
    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }
}

fn design_matrix(model_cols: Vec<ColumnSpec>, rows: impl Iterator<Item = [f64; 10]>) -> Result<FeatureMatrix> {
    let data: Vec<f64> = rows.flatten().collect();
    Ok(FeatureMatrix::new(model_cols, data)?)
}

fn endpoint_target(kind: LearnerKind, raw: f64) -> f64 {
    match kind.task {
        Task::Regression => raw,
        Task::Classification => raw.round(),
    }
}

/// Fits both endpoint models on `records`.
pub fn fit_cadr(records: &[EncounterRecord], cfg: &CadrConfig) -> Result<CadrModel> {
    if records.is_empty() {
        return Err(Error::TooSmall { min: 2, got: 0 });
    }
    let mut support = DoseSupport {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };
    for r in records {
        r.validate(cfg.n_surgery_types, &cfg.registry)?;
        if !cfg.grid.contains(r.administered_dose) {
            return Err(Error::field(
                "administered_dose",
                format!(
                    "case {}: {} outside grid [{}, {}]",
                    r.case_id,
                    r.administered_dose,
                    cfg.grid.min(),
                    cfg.grid.max()
                ),
            ));
        }
        support.min = support.min.min(r.administered_dose);
        support.max = support.max.max(r.administered_dose);
    }
    let x = design_matrix(
        design_columns(&cfg.registry, cfg.n_surgery_types),
        records
            .iter()
            .map(|r| design_row(r.treatment, r.administered_dose, &r.features)),
    )?;
    let pain_y: Vec<f64> = records
        .iter()
        .map(|r| endpoint_target(cfg.pain.kind, r.pain(cfg.pain_target).nrs() as f64))
        .collect();
    let orade_y = records
        .iter()
        .map(|r| Ok(endpoint_target(cfg.orade.kind, orade_severity(&r.orades, &cfg.orade_weights)?)))
        .collect::<Result<Vec<f64>>>()?;

    let (pain_model, orade_model) = rayon::join(
        || train(cfg.pain.kind, &x, &pain_y, &cfg.pain.hyper, sub_seed(cfg.seed, 0)),
        || train(cfg.orade.kind, &x, &orade_y, &cfg.orade.hyper, sub_seed(cfg.seed, 1)),
    );
    let mut warnings = Vec::new();
    if support.min == support.max {
        warnings.push(FitWarning::OverlapDegenerate);
    }
    Ok(CadrModel {
        version: CADR_ARTIFACT_VERSION,
        pain_model: pain_model?,
        orade_model: orade_model?,
        dose_grid: cfg.grid,
        registry: cfg.registry.clone(),
        n_surgery_types: cfg.n_surgery_types,
        pain_target: cfg.pain_target,
        dose_support: support,
        warnings,
    })
}

fn clamp_outcome(v: f64) -> f64 {
    v.clamp(0.0, 10.0)
}

impl CadrModel {
    pub fn check_case(&self, t: Treatment, x: &CaseFeatures) -> Result<()> {
        self.registry.check(t)?;
        x.validate(self.n_surgery_types)
    }

    fn check_dose(&self, d: f64) -> Result<()> {
        if d.is_finite() && self.dose_grid.contains(d) {
            Ok(())
        } else {
            Err(Error::field(
                "dose",
                format!("{d} outside grid [{}, {}]", self.dose_grid.min(), self.dose_grid.max()),
            ))
        }
    }

    fn matrix(&self, t: Treatment, doses: &[f64], x: &CaseFeatures) -> Result<FeatureMatrix> {
        design_matrix(
            design_columns(&self.registry, self.n_surgery_types),
            doses.iter().map(|&d| design_row(t, d, x)),
        )
    }

    /// Clamped predictions at each dose, one batched call per endpoint.
    fn outcomes_at(&self, t: Treatment, doses: &[f64], x: &CaseFeatures) -> Result<Vec<Outcomes>> {
        let m = self.matrix(t, doses, x)?;
        let pain = predict(&self.pain_model, &m)?.expected_values();
        let orade = predict(&self.orade_model, &m)?.expected_values();
        Ok(pain
            .into_iter()
            .zip(orade)
            .map(|(p, o)| Outcomes {
                pain: clamp_outcome(p),
                orade: clamp_outcome(o),
            })
            .collect())
    }

    /// Per-member outcomes for ensemble models (`None` unless both endpoint
    /// models are ensembles).
    fn member_outcomes_at(
        &self,
        t: Treatment,
        doses: &[f64],
        x: &CaseFeatures,
    ) -> Result<Option<Vec<Vec<Outcomes>>>> {
        let m = self.matrix(t, doses, x)?;
        let (Some(pain), Some(orade)) = (
            predict_members(&self.pain_model, &m)?,
            predict_members(&self.orade_model, &m)?,
        ) else {
            return Ok(None);
        };
        if pain.len() != orade.len() {
            return Ok(None);
        }
        let pairs = pain
            .iter()
            .zip(&orade)
            .map(|(p, o): (&Prediction, &Prediction)| {
                p.expected_values()
                    .into_iter()
                    .zip(o.expected_values())
                    .map(|(p, o)| Outcomes {
                        pain: clamp_outcome(p),
                        orade: clamp_outcome(o),
                    })
                    .collect()
            })
            .collect();
        Ok(Some(pairs))
    }
}

/// Predicted pain and adverse-event severity at dose `d`.
pub fn predict_outcomes(model: &CadrModel, t: Treatment, d: f64, x: &CaseFeatures) -> Result<Outcomes> {
    model.check_case(t, x)?;
    model.check_dose(d)?;
    Ok(model.outcomes_at(t, &[d], x)?[0])
}

/// Outcomes of each ensemble member at dose `d`, or `None` for single models.
pub fn member_outcomes(
    model: &CadrModel,
    t: Treatment,
    d: f64,
    x: &CaseFeatures,
) -> Result<Option<Vec<Outcomes>>> {
    model.check_case(t, x)?;
    model.check_dose(d)?;
    Ok(model
        .member_outcomes_at(t, &[d], x)?
        .map(|members| members.into_iter().map(|m| m[0]).collect()))
}

/// Sweeps the model over its dose grid for one case.
pub fn cadr_curve(model: &CadrModel, x: &CaseFeatures, t: Treatment, w: UtilityWeights) -> Result<CadrCurve> {
    model.check_case(t, x)?;
    w.validate()?;
    let doses = model.dose_grid.points();
    let outs = model.outcomes_at(t, &doses, x)?;
    let spread = model.member_outcomes_at(t, &doses, x)?.map(|members| {
        (0..doses.len())
            .map(|i| {
                let us: Vec<f64> = members.iter().map(|m| utility(m[i].pain, m[i].orade, w)).collect();
                let mean = us.iter().sum::<f64>() / us.len() as f64;
                (us.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / us.len() as f64).sqrt()
            })
            .collect()
    });
    Ok(CadrCurve {
        pain_hat: outs.iter().map(|o| o.pain).collect(),
        orade_hat: outs.iter().map(|o| o.orade).collect(),
        utility: outs.iter().map(|o| utility(o.pain, o.orade, w)).collect(),
        doses,
        spread,
    })
}

/// Curves for many cases, evaluated in parallel; element `i` equals
/// `cadr_curve(model, &xs[i], t, w)`.
pub fn cadr_curves(
    model: &CadrModel,
    xs: &[CaseFeatures],
    t: Treatment,
    w: UtilityWeights,
) -> Result<Vec<CadrCurve>> {
    xs.par_iter().map(|x| cadr_curve(model, x, t, w)).collect()
}
