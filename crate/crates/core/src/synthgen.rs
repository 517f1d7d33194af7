//! Synthetic perioperative cohort with known potential outcomes.
//!
//! Causal structure: features X drive both the administered dose D (the
//! observational dosing policy, i.e. confounding) and the outcomes; pain and
//! adverse events depend on (D, X) only. Responses per case:
//!
//! ```text
//! pain(d)  = p0(x) * ed50(x) / (d + ed50(x))          (Emax decay)
//! orade(d) = s_max(x) * d^2 / (d^2 + od50(x)^2)      (Hill growth)
//! ```
//!
//! with `p0, ed50, s_max, od50` affine in the standardized features
//!
//! ```text
//! z_age = (age - 55) / 16      z_weight = (weight - 80) / 15
//! z_duration = ln(duration / 120) / 0.5
//! asa_c = asa - 2              comorbidity_c = comorbidity - 1.5
//! ```
//!
//! and clamped to documented ranges. Observed adverse events are generated by
//! thresholding a latent severity (true response plus noise) so that the
//! observed severity score tracks the latent on average.
//!
//! Randomness: every case draws from its own ChaCha8 stream seeded with
//! `sub_seed(seed, case_index)`, so cohorts do not depend on thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use opiaid_learners::sub_seed;

use crate::domain::{
    orade_severity, validate_pain, CaseFeatures, DoseGrid, DoseMeq, EncounterRecord, Nausea,
    OradeRecord, OradeWeights, Sedation, Sex, Treatment, TreatmentRegistry, UtilityWeights,
};
use crate::strata::{severity_score, Strata};
use crate::{Error, Result};

pub const GENERATOR_VERSION: &str = "opiaid-scm/1";

/// Standardized view of a case used by every response and policy equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardized {
    pub age: f64,
    pub weight: f64,
    pub duration: f64,
    pub asa: f64,
    pub comorbidity: f64,
    pub chronic: f64,
}

pub fn standardize(x: &CaseFeatures) -> Standardized {
    Standardized {
        age: (x.age as f64 - 55.0) / 16.0,
        weight: (x.weight - 80.0) / 15.0,
        duration: (x.surgery_duration / 120.0).ln() / 0.5,
        asa: x.asa_class as f64 - 2.0,
        comorbidity: x.comorbidity_score - 1.5,
        chronic: if x.chronic_opioid_use { 1.0 } else { 0.0 },
    }
}

/// `intercept + Σ coef * z`, optionally clamped to `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    #[serde(default)]
    pub age: f64,
    #[serde(default)]
    pub weight: f64,
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub asa: f64,
    #[serde(default)]
    pub comorbidity: f64,
    #[serde(default)]
    pub chronic: f64,
    pub min: f64,
    pub max: f64,
}

impl Affine {
    pub fn constant(value: f64, min: f64, max: f64) -> Self {
        Affine {
            intercept: value,
            age: 0.0,
            weight: 0.0,
            duration: 0.0,
            asa: 0.0,
            comorbidity: 0.0,
            chronic: 0.0,
            min,
            max,
        }
    }

    pub fn linear(&self, z: &Standardized) -> f64 {
        self.intercept
            + self.age * z.age
            + self.weight * z.weight
            + self.duration * z.duration
            + self.asa * z.asa
            + self.comorbidity * z.comorbidity
            + self.chronic * z.chronic
    }

    pub fn eval(&self, z: &Standardized) -> f64 {
        self.linear(z).clamp(self.min, self.max)
    }

    fn check(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        let vals = [
            self.intercept,
            self.age,
            self.weight,
            self.duration,
            self.asa,
            self.comorbidity,
            self.chronic,
            self.min,
            self.max,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("{name}: non-finite coefficient")));
        }
        if self.min > self.max || self.min < lo || self.max > hi {
            return Err(Error::InvalidConfig(format!(
                "{name}: clamp [{}, {}] must lie within [{lo}, {hi}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistribution {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: u32,
    pub age_max: u32,
    pub p_male: f64,
    pub weight_mean_female: f64,
    pub weight_male_shift: f64,
    pub weight_sd: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    /// Probabilities of ASA classes 1..=5.
    pub asa_probs: Vec<f64>,
    /// Minutes; log-normal.
    pub duration_median: f64,
    pub duration_log_sd: f64,
    pub duration_min: f64,
    pub duration_max: f64,
    /// One probability per surgery type; its length is the number of types.
    pub surgery_type_probs: Vec<f64>,
    pub p_chronic: f64,
    pub comorbidity_shape: f64,
    pub comorbidity_scale: f64,
}

impl Default for FeatureDistribution {
    fn default() -> Self {
        FeatureDistribution {
            age_mean: 55.0,
            age_sd: 16.0,
            age_min: 18,
            age_max: 95,
            p_male: 0.5,
            weight_mean_female: 74.0,
            weight_male_shift: 8.0,
            weight_sd: 14.0,
            weight_min: 40.0,
            weight_max: 160.0,
            asa_probs: vec![0.15, 0.45, 0.30, 0.09, 0.01],
            duration_median: 120.0,
            duration_log_sd: 0.5,
            duration_min: 15.0,
            duration_max: 600.0,
            surgery_type_probs: vec![0.30, 0.25, 0.20, 0.15, 0.10],
            p_chronic: 0.12,
            comorbidity_shape: 2.0,
            comorbidity_scale: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyNoise {
    Gaussian { sd: f64 },
    Uniform { half_width: f64 },
}

impl PolicyNoise {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            PolicyNoise::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            PolicyNoise::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

/// Restricts one severity stratum to low doses so overlap fails there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityViolation {
    pub n_strata: usize,
    pub stratum: usize,
    pub max_dose: f64,
}

/// Observational dosing: `clamp(affine(x) + noise, 0, max_dose)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosePolicy {
    pub coefficients: Affine,
    pub noise: PolicyNoise,
    #[serde(default)]
    pub positivity_violation: Option<PositivityViolation>,
}

impl Default for DosePolicy {
    fn default() -> Self {
        DosePolicy {
            coefficients: Affine {
                intercept: 8.0,
                age: -1.0,
                weight: 1.5,
                duration: 1.0,
                asa: -0.5,
                comorbidity: 0.0,
                chronic: 3.0,
                min: f64::MIN,
                max: f64::MAX,
            },
            noise: PolicyNoise::Gaussian { sd: 3.5 },
            positivity_violation: None,
        }
    }
}

impl DosePolicy {
    /// Doses uniform on `[0, max_dose]` regardless of the case.
    pub fn uniform(max_dose: f64) -> Self {
        DosePolicy {
            coefficients: Affine::constant(max_dose / 2.0, f64::MIN, f64::MAX),
            noise: PolicyNoise::Uniform {
                half_width: max_dose / 2.0,
            },
            positivity_violation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PainModel {
    pub baseline: Affine,
    pub ed50: Affine,
    /// Additive baseline shift per surgery type.
    pub surgery_type_shift: Vec<f64>,
}

impl Default for PainModel {
    fn default() -> Self {
        PainModel {
            baseline: Affine {
                intercept: 8.0,
                age: -0.4,
                weight: 0.0,
                duration: 0.5,
                asa: 0.0,
                comorbidity: 0.0,
                chronic: 0.8,
                min: 4.0,
                max: 10.0,
            },
            ed50: Affine {
                intercept: 5.0,
                age: -0.6,
                weight: 1.2,
                duration: 0.0,
                asa: 0.0,
                comorbidity: 0.0,
                chronic: 3.0,
                min: 3.0,
                max: 12.0,
            },
            surgery_type_shift: vec![0.0, 0.4, -0.3, -0.6, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OradeModel {
    pub ceiling: Affine,
    pub od50: Affine,
}

impl Default for OradeModel {
    fn default() -> Self {
        OradeModel {
            ceiling: Affine {
                intercept: 6.0,
                age: 0.8,
                weight: 0.0,
                duration: 0.0,
                asa: 0.6,
                comorbidity: 0.4,
                chronic: 0.0,
                min: 2.0,
                max: 10.0,
            },
            od50: Affine {
                intercept: 10.0,
                age: -1.0,
                weight: 1.2,
                duration: 0.0,
                asa: -0.5,
                comorbidity: 0.0,
                chronic: 2.0,
                min: 6.0,
                max: 14.0,
            },
        }
    }
}

/// `los = max(0, intercept + pain * pain_arrival + severity * orade_severity + noise)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosModel {
    pub intercept: f64,
    pub pain: f64,
    pub severity: f64,
}

impl Default for LosModel {
    fn default() -> Self {
        LosModel {
            intercept: 30.0,
            pain: 5.0,
            severity: 5.0,
        }
    }
}

/// Rescue analgesia `max(0, per_nrs * (pain_arrival - threshold) + noise)`,
/// given in boluses of `bolus_meq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescueModel {
    pub per_nrs: f64,
    pub threshold: f64,
    pub bolus_meq: f64,
}

impl Default for RescueModel {
    fn default() -> Self {
        RescueModel {
            per_nrs: 2.0,
            threshold: 4.0,
            bolus_meq: 2.5,
        }
    }
}

/// Noise standard deviations. `orade_link` is the logistic scale used when
/// turning the latent severity into discrete events (0 = hard threshold).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub pain_sd: f64,
    pub orade_sd: f64,
    pub orade_link: f64,
    pub los_sd: f64,
    pub rescue_sd: f64,
    pub cas_sd: f64,
    pub impact_sd: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            pain_sd: 1.0,
            orade_sd: 0.8,
            orade_link: 0.3,
            los_sd: 10.0,
            rescue_sd: 1.0,
            cas_sd: 0.5,
            impact_sd: 1.0,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            pain_sd: 0.0,
            orade_sd: 0.0,
            orade_link: 0.0,
            los_sd: 0.0,
            rescue_sd: 0.0,
            cas_sd: 0.0,
            impact_sd: 0.0,
        }
    }
}

/// The complete generator: distributions, policy, responses, noise and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmGroundTruth {
    pub version: String,
    pub seed: u64,
    pub max_dose: f64,
    pub registry: TreatmentRegistry,
    pub features: FeatureDistribution,
    pub policy: DosePolicy,
    pub pain: PainModel,
    pub orade: OradeModel,
    pub los: LosModel,
    pub rescue: RescueModel,
    pub noise: NoiseModel,
    pub orade_weights: OradeWeights,
}

impl Default for ScmGroundTruth {
    fn default() -> Self {
        ScmGroundTruth {
            version: GENERATOR_VERSION.into(),
            seed: 0,
            max_dose: 20.0,
            registry: TreatmentRegistry::default(),
            features: FeatureDistribution::default(),
            policy: DosePolicy::default(),
            pain: PainModel::default(),
            orade: OradeModel::default(),
            los: LosModel::default(),
            rescue: RescueModel::default(),
            noise: NoiseModel::default(),
            orade_weights: OradeWeights::default(),
        }
    }
}

/// Per-case response parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseParameters {
    pub p0: f64,
    pub ed50: f64,
    pub s_max: f64,
    pub od50: f64,
}

pub fn emax_pain(p0: f64, ed50: f64, d: f64) -> f64 {
    (p0 * ed50 / (d + ed50)).clamp(0.0, 10.0)
}

pub fn hill_orade(s_max: f64, od50: f64, d: f64) -> f64 {
    let d2 = d * d;
    (s_max * d2 / (d2 + od50 * od50)).clamp(0.0, 10.0)
}

/// The case whose parameters are exactly (p0, ed50, s_max, od50) = (8, 5, 6, 10)
/// under the default generator.
pub fn reference_case() -> CaseFeatures {
    CaseFeatures {
        age: 55,
        weight: 80.0,
        sex: Sex::Female,
        asa_class: 2,
        surgery_duration: 120.0,
        surgery_type: 0,
        chronic_opioid_use: false,
        comorbidity_score: 1.5,
    }
}

impl ScmGroundTruth {
    /// Same generator with every outcome noise set to zero. Dose assignment
    /// keeps its noise so the cohort still covers the dose range.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseModel::zero();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_surgery_types(&self) -> u32 {
        self.features.surgery_type_probs.len() as u32
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.version != GENERATOR_VERSION {
            return bad(&format!(
                "generator version `{}` (supported: `{GENERATOR_VERSION}`)",
                self.version
            ));
        }
        if !(self.max_dose.is_finite() && self.max_dose > 0.0) {
            return bad("max_dose must be positive");
        }
        if self.registry.is_empty() {
            return bad("treatment registry is empty");
        }
        let f = &self.features;
        for (name, p) in [("asa_probs", &f.asa_probs), ("surgery_type_probs", &f.surgery_type_probs)] {
            if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || p.iter().sum::<f64>() <= 0.0 {
                return bad(&format!("{name} must be non-negative with a positive sum"));
            }
        }
        if f.asa_probs.len() != 5 {
            return bad("asa_probs needs one entry per ASA class 1..=5");
        }
        if f.age_min < crate::domain::MIN_ADULT_AGE || f.age_max < f.age_min {
            return bad("age bounds must be adult and ordered");
        }
        if !(f.weight_min > 0.0 && f.weight_max >= f.weight_min) {
            return bad("weight bounds must be positive and ordered");
        }
        if !(f.duration_min > 0.0 && f.duration_max >= f.duration_min && f.duration_median > 0.0) {
            return bad("duration bounds must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&f.p_male) || !(0.0..=1.0).contains(&f.p_chronic) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(f.comorbidity_shape > 0.0 && f.comorbidity_scale > 0.0) {
            return bad("comorbidity gamma parameters must be positive");
        }
        if self.pain.surgery_type_shift.len() != f.surgery_type_probs.len() {
            return bad("surgery_type_shift needs one entry per surgery type");
        }
        self.pain.baseline.check("pain.baseline", 0.0, 10.0)?;
        self.pain.ed50.check("pain.ed50", f64::MIN_POSITIVE, f64::MAX)?;
        self.orade.ceiling.check("orade.ceiling", 0.0, 10.0)?;
        self.orade.od50.check("orade.od50", f64::MIN_POSITIVE, f64::MAX)?;
        let n = &self.noise;
        let sds = [
            n.pain_sd,
            n.orade_sd,
            n.orade_link,
            n.los_sd,
            n.rescue_sd,
            n.cas_sd,
            n.impact_sd,
        ];
        if sds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise scales must be finite and >= 0");
        }
        match self.policy.noise {
            PolicyNoise::Gaussian { sd: s } | PolicyNoise::Uniform { half_width: s }
                if !(s.is_finite() && s >= 0.0) =>
            {
                return bad("dose noise must be finite and >= 0")
            }
            _ => {}
        }
        if let Some(v) = self.policy.positivity_violation {
            if v.n_strata == 0 || v.stratum >= v.n_strata || v.max_dose.is_nan() || v.max_dose < 0.0 {
                return bad("positivity violation needs stratum < n_strata and max_dose >= 0");
            }
        }
        orade_severity(&OradeRecord::default(), &self.orade_weights)?;
        Ok(())
    }

    pub fn case_parameters(&self, x: &CaseFeatures) -> CaseParameters {
        let z = standardize(x);
        let shift = self
            .pain
            .surgery_type_shift
            .get(x.surgery_type as usize)
            .copied()
            .unwrap_or(0.0);
        let b = &self.pain.baseline;
        CaseParameters {
            p0: (b.linear(&z) + shift).clamp(b.min, b.max),
            ed50: self.pain.ed50.eval(&z),
            s_max: self.orade.ceiling.eval(&z),
            od50: self.orade.od50.eval(&z),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Index drawn from unnormalized probabilities by inverse CDF.
fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn draw_features(f: &FeatureDistribution, seed: u64) -> CaseFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age = (f.age_mean + f.age_sd * normal(&mut rng))
        .clamp(f.age_min as f64, f.age_max as f64)
        .round() as u32;
    let male = rng.random_bool(f.p_male);
    let weight = (f.weight_mean_female
        + if male { f.weight_male_shift } else { 0.0 }
        + f.weight_sd * normal(&mut rng))
    .clamp(f.weight_min, f.weight_max);
    let asa_class = categorical(&mut rng, &f.asa_probs) as u8 + 1;
    let surgery_duration = (f.duration_median.ln() + f.duration_log_sd * normal(&mut rng))
        .exp()
        .clamp(f.duration_min, f.duration_max);
    let surgery_type = categorical(&mut rng, &f.surgery_type_probs) as u32;
    let chronic_opioid_use = rng.random_bool(f.p_chronic);
    let comorbidity_score = Gamma::new(f.comorbidity_shape, f.comorbidity_scale)
        .expect("validated gamma parameters")
        .sample(&mut rng);
    CaseFeatures {
        age,
        weight,
        sex: if male { Sex::Male } else { Sex::Female },
        asa_class,
        surgery_duration,
        surgery_type,
        chronic_opioid_use,
        comorbidity_score,
    }
}

fn case_seed(seed: u64, i: usize) -> u64 {
    sub_seed(seed, i as u64)
}

/// `n` i.i.d. feature vectors. Case `i` matches case `i` of
/// [`generate_cohort`] run with the same seed.
pub fn sample_features(gt: &ScmGroundTruth, n: usize, seed: u64) -> Result<Vec<CaseFeatures>> {
    if n == 0 {
        return Err(Error::TooSmall { min: 1, got: 0 });
    }
    gt.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| draw_features(&gt.features, sub_seed(case_seed(seed, i), 0)))
        .collect())
}

/// The policy dose for `x` with an explicit noise term, clamped to `[0, max_dose]`.
pub fn assign_observational_dose(gt: &ScmGroundTruth, x: &CaseFeatures, noise: f64) -> DoseMeq {
    let d = gt.policy.coefficients.linear(&standardize(x)) + noise;
    DoseMeq(d.clamp(0.0, gt.max_dose))
}

/// Expected pain at dose `d`. Every registered opiate shares the response
/// once expressed in MEQ.
pub fn true_pain_response(gt: &ScmGroundTruth, _t: Treatment, d: DoseMeq, x: &CaseFeatures) -> f64 {
    let p = gt.case_parameters(x);
    emax_pain(p.p0, p.ed50, d.0)
}

/// Expected adverse-event severity at dose `d`.
pub fn true_orade_response(gt: &ScmGroundTruth, _t: Treatment, d: DoseMeq, x: &CaseFeatures) -> f64 {
    let p = gt.case_parameters(x);
    hill_orade(p.s_max, p.od50, d.0)
}

/// True utility `-(w_pain * pain + w_orades * orade)` at dose `d`.
pub fn true_utility(gt: &ScmGroundTruth, t: Treatment, d: f64, x: &CaseFeatures, w: UtilityWeights) -> f64 {
    let d = DoseMeq(d);
    -(w.w_pain * true_pain_response(gt, t, d, x) + w.w_orades * true_orade_response(gt, t, d, x))
}

/// Grid dose minimizing the weighted true outcomes; ties go to the lowest dose.
pub fn true_optimal_dose(
    gt: &ScmGroundTruth,
    x: &CaseFeatures,
    t: Treatment,
    grid: &DoseGrid,
    w: UtilityWeights,
) -> DoseMeq {
    let mut best = (grid.point(0), f64::INFINITY);
    for d in grid.points() {
        let loss = -true_utility(gt, t, d, x, w);
        if loss < best.1 {
            best = (d, loss);
        }
    }
    DoseMeq(best.0)
}

/// The observed event stair: each step fires once the latent severity passes
/// the midpoint of the severity score before and after the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    NauseaMild,
    NauseaModerate,
    SedationVerbal,
    Dizziness,
    Itching,
    Vomiting,
    NauseaSevere,
    Antiemetic,
    UrinaryRetention,
    SedationPain,
    Confusion,
    Hallucinations,
    SedationUnresponsive,
    RespiratoryDepression,
    Naloxone,
}

const STAIR: [Step; 15] = [
    Step::NauseaMild,
    Step::NauseaModerate,
    Step::SedationVerbal,
    Step::Dizziness,
    Step::Itching,
    Step::Vomiting,
    Step::NauseaSevere,
    Step::Antiemetic,
    Step::UrinaryRetention,
    Step::SedationPain,
    Step::Confusion,
    Step::Hallucinations,
    Step::SedationUnresponsive,
    Step::RespiratoryDepression,
    Step::Naloxone,
];

/// Latent-severity thresholds of every step, ascending.
fn stair_thresholds(w: &OradeWeights) -> [f64; 15] {
    let total: f64 = w.as_array().iter().sum();
    let third = 1.0 / 3.0;
    let mut out = [0.0; 15];
    let mut acc = 0.0;
    for (k, step) in STAIR.iter().enumerate() {
        let inc = match step {
            Step::NauseaMild | Step::NauseaModerate | Step::NauseaSevere => w.nausea * third,
            Step::SedationVerbal | Step::SedationPain | Step::SedationUnresponsive => w.sedation * third,
            Step::Dizziness => w.dizziness,
            Step::Itching => w.itching,
            Step::Vomiting => w.vomiting,
            Step::Antiemetic => w.rescue_antiemetic,
            Step::UrinaryRetention => w.urinary_retention,
            Step::Confusion => w.confusion,
            Step::Hallucinations => w.hallucinations,
            Step::RespiratoryDepression => w.respiratory_depression,
            Step::Naloxone => w.rescue_naloxone,
        } * 10.0
            / total;
        out[k] = acc + inc / 2.0;
        acc += inc;
    }
    out
}

fn fire_probability(latent: f64, threshold: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        1.0 / (1.0 + (-(latent - threshold) / scale).exp())
    } else if latent > threshold {
        1.0
    } else {
        0.0
    }
}

/// Discrete events for one latent severity. Ordinal components use a single
/// uniform per component so their levels stay ordered.
fn draw_orades(latent: f64, thresholds: &[f64; 15], scale: f64, rng: &mut ChaCha8Rng) -> OradeRecord {
    let u_nausea: f64 = rng.random();
    let u_sedation: f64 = rng.random();
    let mut rec = OradeRecord::default();
    let (mut nausea, mut sedation) = (0u8, 0u8);
    for (step, &thr) in STAIR.iter().zip(thresholds) {
        let p = fire_probability(latent, thr, scale);
        match step {
            Step::NauseaMild | Step::NauseaModerate | Step::NauseaSevere => {
                nausea += (u_nausea < p) as u8;
                continue;
            }
            Step::SedationVerbal | Step::SedationPain | Step::SedationUnresponsive => {
                sedation += (u_sedation < p) as u8;
                continue;
            }
            _ => {}
        }
        let fired = rng.random::<f64>() < p;
        match step {
            Step::Dizziness => rec.dizziness = fired,
            Step::Itching => rec.itching = fired,
            Step::Vomiting => rec.vomiting = fired,
            Step::Antiemetic => rec.rescue_antiemetic = fired,
            Step::UrinaryRetention => rec.urinary_retention = fired,
            Step::Confusion => rec.confusion = fired,
            Step::Hallucinations => rec.hallucinations = fired,
            Step::RespiratoryDepression => rec.respiratory_depression = fired,
            Step::Naloxone => rec.rescue_naloxone = fired && rec.respiratory_depression,
            _ => unreachable!(),
        }
    }
    rec.nausea = Nausea::from_level(nausea).expect("at most three nausea steps");
    rec.sedation = Sedation::from_level(sedation).expect("at most three sedation steps");
    rec
}

fn nrs(value: f64) -> crate::domain::PainScore {
    validate_pain(value.clamp(0.0, 10.0).round() as i64).expect("clamped to 0..=10")
}

/// Expected discharge-readiness time for the given observed outcomes.
pub fn pacu_los(gt: &ScmGroundTruth, pain: f64, severity: f64, noise: f64) -> f64 {
    (gt.los.intercept + gt.los.pain * pain + gt.los.severity * severity + noise).max(0.0)
}

fn draw_record(
    gt: &ScmGroundTruth,
    thresholds: &[f64; 15],
    index: usize,
    features: CaseFeatures,
    dose_cap: Option<f64>,
) -> EncounterRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(case_seed(gt.seed, index), 1));
    let n = gt.noise;
    let t = Treatment::MORPHINE;
    let x = &features;

    let noise = gt.policy.noise.draw(&mut rng);
    let mut d = assign_observational_dose(gt, x, noise).0;
    if let Some(cap) = dose_cap {
        d = d.min(cap);
    }
    let params = gt.case_parameters(x);
    let pain_at = |dose: f64| emax_pain(params.p0, params.ed50, dose);

    let pain_arrival = nrs(pain_at(d) + n.pain_sd * normal(&mut rng));

    let latent = hill_orade(params.s_max, params.od50, d) + n.orade_sd * normal(&mut rng);
    let mut orades = draw_orades(latent, thresholds, n.orade_link, &mut rng);
    let severity = orade_severity(&orades, &gt.orade_weights).expect("validated weights");

    let r = gt.rescue;
    let rescue = (r.per_nrs * (pain_arrival.nrs() as f64 - r.threshold) + n.rescue_sd * normal(&mut rng))
        .max(0.0);
    let n_boluses = if rescue > 0.0 {
        (rescue / r.bolus_meq).ceil() as usize
    } else {
        0
    };
    let pain_pre_dosing = (0..n_boluses)
        .map(|j| nrs(pain_at(d + j as f64 * r.bolus_meq) + n.pain_sd * normal(&mut rng)))
        .collect();
    let pain_discharge = nrs(pain_at(d + rescue) + n.pain_sd * normal(&mut rng));

    let pacu_los = pacu_los(gt, pain_arrival.nrs() as f64, severity, n.los_sd * normal(&mut rng));
    let cas = (6.0 - 0.5 * pain_discharge.nrs() as f64 - 0.3 * severity + n.cas_sd * normal(&mut rng))
        .round()
        .clamp(0.0, 6.0) as u8;
    let impact_noise = n.impact_sd * normal(&mut rng);
    if pain_arrival.nrs() >= 4 || severity > 0.0 {
        let v = 0.5 * pain_discharge.nrs() as f64 + 0.5 * severity + impact_noise;
        orades.impact_score = Some(v.round().clamp(0.0, 10.0) as u8);
    }

    EncounterRecord {
        case_id: index as u64,
        features,
        treatment: t,
        administered_dose: d,
        pain_arrival,
        pain_pre_dosing,
        pain_discharge,
        orades,
        rescue_analgesia_meq: rescue,
        pacu_los,
        ambulation_cas: cas,
    }
}

/// A generated cohort together with the generator that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub generator_version: String,
    pub ground_truth: ScmGroundTruth,
    pub records: Vec<EncounterRecord>,
}

/// Draws `n` encounters; a pure function of `(gt, n)` (the seed lives in `gt`).
pub fn generate_cohort(gt: &ScmGroundTruth, n: usize) -> Result<Cohort> {
    let features = sample_features(gt, n, gt.seed)?;
    let caps: Vec<Option<f64>> = match gt.policy.positivity_violation {
        None => vec![None; n],
        Some(v) => {
            let scores: Vec<f64> = features.iter().map(severity_score).collect();
            let strata = Strata::fit(&scores, v.n_strata);
            scores
                .iter()
                .map(|&s| (strata.assign(s) == v.stratum).then_some(v.max_dose))
                .collect()
        }
    };
    let thresholds = stair_thresholds(&gt.orade_weights);
    let records = features
        .into_par_iter()
        .zip(caps)
        .enumerate()
        .map(|(i, (x, cap))| draw_record(gt, &thresholds, i, x, cap))
        .collect();
    Ok(Cohort {
        generator_version: GENERATOR_VERSION.into(),
        ground_truth: gt.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_case_has_documented_parameters() {
        let p = ScmGroundTruth::default().case_parameters(&reference_case());
        assert_eq!(
            p,
            CaseParameters {
                p0: 8.0,
                ed50: 5.0,
                s_max: 6.0,
                od50: 10.0
            }
        );
    }

    #[test]
    fn closed_forms() {
        assert_eq!(emax_pain(8.0, 5.0, 15.0), 2.0);
        assert_eq!(emax_pain(8.0, 5.0, 5.0), 4.0);
        assert_eq!(emax_pain(8.0, 5.0, 0.0), 8.0);
        assert_eq!(hill_orade(6.0, 10.0, 20.0), 4.8);
        assert_eq!(hill_orade(6.0, 10.0, 10.0), 3.0);
        assert_eq!(hill_orade(6.0, 10.0, 0.0), 0.0);
    }

    #[test]
    fn stair_matches_severity_steps() {
        let w = OradeWeights::default();
        let thr = stair_thresholds(&w);
        assert!(thr.windows(2).all(|p| p[0] < p[1]));
        // Latent just above each threshold reproduces the staircase value.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut prev = 0.0;
        for t in thr {
            let rec = draw_orades(t + 1e-9, &thr, 0.0, &mut rng);
            let s = orade_severity(&rec, &w).unwrap();
            assert!(s > prev);
            assert!((s - t).abs() <= 1.1539, "{s} vs {t}");
            prev = s;
        }
        assert!((prev - 10.0).abs() < 1e-12);
        assert_eq!(draw_orades(0.0, &thr, 0.0, &mut rng), OradeRecord::default());
    }

    #[test]
    fn naloxone_implies_respiratory_depression() {
        let thr = stair_thresholds(&OradeWeights::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..2000 {
            let rec = draw_orades(i as f64 / 200.0, &thr, 2.0, &mut rng);
            rec.validate().unwrap();
        }
    }

    #[test]
    fn los_noiseless_linear_form() {
        let gt = ScmGroundTruth::default().noiseless();
        assert_eq!(pacu_los(&gt, 4.0, 2.0, 0.0), 60.0);
        assert_eq!(pacu_los(&gt, 0.0, 0.0, -100.0), 0.0);
    }
}
