//! Clinical variables, validators and morphine-equivalence arithmetic.
//!
//! Doses are expressed in mg morphine equivalents (MEQ). Pain is an integer
//! NRS score 0..=10; adverse events are kept per component in an
//! [`OradeRecord`] and reduced to a single 0..10 severity with
//! [`orade_severity`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MIN_ADULT_AGE: u32 = 18;
pub const DEFAULT_SURGERY_TYPES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "female" => Some(Sex::Female),
            "male" => Some(Sex::Male),
            _ => None,
        }
    }
}

/// Patient and surgery characteristics of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFeatures {
    /// Years.
    pub age: u32,
    /// Kilograms.
    pub weight: f64,
    pub sex: Sex,
    pub asa_class: u8,
    /// Minutes.
    pub surgery_duration: f64,
    pub surgery_type: u32,
    pub chronic_opioid_use: bool,
    pub comorbidity_score: f64,
}

impl CaseFeatures {
    /// Checks every field against its clinical range; `n_surgery_types` bounds
    /// the categorical surgery id.
    pub fn validate(&self, n_surgery_types: u32) -> Result<()> {
        if self.age < MIN_ADULT_AGE {
            return Err(Error::field("age", format!("{} is below {MIN_ADULT_AGE}", self.age)));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::field("weight", format!("{} is not a positive weight", self.weight)));
        }
        if !(1..=5).contains(&self.asa_class) {
            return Err(Error::field("asa_class", format!("{} outside 1..=5", self.asa_class)));
        }
        if !(self.surgery_duration.is_finite() && self.surgery_duration > 0.0) {
            return Err(Error::field(
                "surgery_duration",
                format!("{} is not a positive duration", self.surgery_duration),
            ));
        }
        if self.surgery_type >= n_surgery_types {
            return Err(Error::field(
                "surgery_type",
                format!("{} outside 0..{n_surgery_types}", self.surgery_type),
            ));
        }
        if !(self.comorbidity_score.is_finite() && self.comorbidity_score >= 0.0) {
            return Err(Error::field(
                "comorbidity_score",
                format!("{} is not a finite non-negative score", self.comorbidity_score),
            ));
        }
        Ok(())
    }
}

/// Ordered list of opiates a treatment id indexes into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentRegistry {
    pub version: String,
    pub opiates: Vec<String>,
}

impl Default for TreatmentRegistry {
    fn default() -> Self {
        Self {
            version: "1".into(),
            opiates: vec!["morphine".into()],
        }
    }
}

impl TreatmentRegistry {
    pub fn len(&self) -> usize {
        self.opiates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opiates.is_empty()
    }

    pub fn check(&self, t: Treatment) -> Result<()> {
        if t.opiate_id < self.opiates.len() {
            Ok(())
        } else {
            Err(Error::field(
                "treatment",
                format!("opiate id {} outside registry of {}", t.opiate_id, self.opiates.len()),
            ))
        }
    }

    pub fn name(&self, t: Treatment) -> Option<&str> {
        self.opiates.get(t.opiate_id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<Treatment> {
        self.opiates
            .iter()
            .position(|o| o == name)
            .map(|opiate_id| Treatment { opiate_id })
    }
}

/// Index into a [`TreatmentRegistry`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Treatment {
    pub opiate_id: usize,
}

impl Treatment {
    pub const MORPHINE: Treatment = Treatment { opiate_id: 0 };
}

/// A dose in mg morphine equivalents.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DoseMeq(pub f64);

impl DoseMeq {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for DoseMeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} MEQ", self.0)
    }
}

/// Evenly spaced doses `min, min + step, ...` up to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct DoseGrid {
    min_meq: f64,
    max_meq: f64,
    step_meq: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    min_meq: f64,
    max_meq: f64,
    step_meq: f64,
}

impl TryFrom<RawGrid> for DoseGrid {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        DoseGrid::new(r.min_meq, r.max_meq, r.step_meq)
    }
}

impl From<DoseGrid> for RawGrid {
    fn from(g: DoseGrid) -> Self {
        RawGrid {
            min_meq: g.min_meq,
            max_meq: g.max_meq,
            step_meq: g.step_meq,
        }
    }
}

impl Default for DoseGrid {
    fn default() -> Self {
        DoseGrid {
            min_meq: 0.0,
            max_meq: 20.0,
            step_meq: 0.5,
        }
    }
}

impl DoseGrid {
    pub fn new(min_meq: f64, max_meq: f64, step_meq: f64) -> Result<Self> {
        if !(min_meq.is_finite() && max_meq.is_finite() && step_meq.is_finite()) {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if min_meq < 0.0 {
            return Err(Error::InvalidGrid(format!("min {min_meq} < 0")));
        }
        if max_meq <= min_meq {
            return Err(Error::InvalidGrid(format!("max {max_meq} <= min {min_meq}")));
        }
        if step_meq <= 0.0 {
            return Err(Error::InvalidGrid(format!("step {step_meq} <= 0")));
        }
        let g = DoseGrid {
            min_meq,
            max_meq,
            step_meq,
        };
        if g.len() < 2 {
            return Err(Error::InvalidGrid("fewer than two grid points".into()));
        }
        Ok(g)
    }

    /// Parses `min:max:step`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
        match nums.as_deref() {
            Some(&[a, b, c]) => DoseGrid::new(a, b, c),
            _ => Err(Error::InvalidGrid(format!("expected min:max:step, got `{s}`"))),
        }
    }

    pub fn min(&self) -> f64 {
        self.min_meq
    }

    pub fn max(&self) -> f64 {
        self.max_meq
    }

    pub fn step(&self) -> f64 {
        self.step_meq
    }

    pub fn len(&self) -> usize {
        // The epsilon absorbs representation error in e.g. 20 / 0.1.
        ((self.max_meq - self.min_meq) / self.step_meq + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        self.min_meq + i as f64 * self.step_meq
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min_meq && d <= self.max_meq
    }

    /// Index of the nearest grid point; halfway cases go to the lower point.
    pub fn nearest_index(&self, d: f64) -> usize {
        let pos = (d - self.min_meq) / self.step_meq;
        let below = pos.floor().clamp(0.0, (self.len() - 1) as f64) as usize;
        if below + 1 < self.len() && (self.point(below + 1) - d).abs() < (d - self.point(below)).abs()
        {
            below + 1
        } else {
            below
        }
    }

    pub fn snap(&self, d: f64) -> f64 {
        self.point(self.nearest_index(d))
    }
}

/// An NRS pain score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct PainScore(u8);

impl PainScore {
    pub fn nrs(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for PainScore {
    type Error = Error;
    fn try_from(raw: i64) -> Result<Self> {
        validate_pain(raw)
    }
}

impl From<PainScore> for u8 {
    fn from(p: PainScore) -> u8 {
        p.0
    }
}

impl fmt::Display for PainScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn validate_pain(raw: i64) -> Result<PainScore> {
    if (0..=10).contains(&raw) {
        Ok(PainScore(raw as u8))
    } else {
        Err(Error::OutOfRange(raw))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nausea {
    #[default]
    None,
    Mild,
    Moderate,
    Severe,
}

/// AVPU sedation level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sedation {
    #[default]
    Alert,
    Verbal,
    Pain,
    Unresponsive,
}

macro_rules! ordinal {
    ($t:ty, [$($v:ident => $s:literal),*]) => {
        impl $t {
            pub const LEVELS: [$t; 4] = [$(<$t>::$v),*];

            pub fn level(self) -> u8 {
                self as u8
            }

            /// Level mapped onto [0, 1].
            pub fn severity(self) -> f64 {
                self.level() as f64 / 3.0
            }

            pub fn from_level(level: u8) -> Option<Self> {
                Self::LEVELS.get(level as usize).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $(<$t>::$v => $s),*
                }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s {
                    $($s => Some(<$t>::$v),)*
                    _ => None,
                }
            }
        }
    };
}

ordinal!(Nausea, [None => "none", Mild => "mild", Moderate => "moderate", Severe => "severe"]);
ordinal!(Sedation, [Alert => "alert", Verbal => "verbal", Pain => "pain", Unresponsive => "unresponsive"]);

/// Opioid-related adverse drug events observed for one case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OradeRecord {
    pub nausea: Nausea,
    pub vomiting: bool,
    pub sedation: Sedation,
    pub dizziness: bool,
    pub itching: bool,
    pub urinary_retention: bool,
    pub confusion: bool,
    pub hallucinations: bool,
    pub respiratory_depression: bool,
    pub rescue_naloxone: bool,
    pub rescue_antiemetic: bool,
    /// Day-one negative impact, 0 (none) to 10 (extreme).
    pub impact_score: Option<u8>,
}

impl OradeRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.impact_score {
            if s > 10 {
                return Err(Error::field("impact_score", format!("{s} outside 0..=10")));
            }
        }
        if self.rescue_naloxone && !self.respiratory_depression {
            return Err(Error::field(
                "rescue_naloxone",
                "naloxone use implies respiratory depression",
            ));
        }
        Ok(())
    }

    /// The record with every component at its worst level.
    pub fn worst() -> Self {
        OradeRecord {
            nausea: Nausea::Severe,
            vomiting: true,
            sedation: Sedation::Unresponsive,
            dizziness: true,
            itching: true,
            urinary_retention: true,
            confusion: true,
            hallucinations: true,
            respiratory_depression: true,
            rescue_naloxone: true,
            rescue_antiemetic: true,
            impact_score: Some(10),
        }
    }

    /// Per-component severities in [0, 1], in [`OradeWeights::as_array`] order.
    pub fn severities(&self) -> [f64; 11] {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        [
            self.nausea.severity(),
            b(self.vomiting),
            self.sedation.severity(),
            b(self.dizziness),
            b(self.itching),
            b(self.urinary_retention),
            b(self.confusion),
            b(self.hallucinations),
            b(self.respiratory_depression),
            b(self.rescue_naloxone),
            b(self.rescue_antiemetic),
        ]
    }
}

/// Per-component weights of the severity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OradeWeights {
    pub nausea: f64,
    pub vomiting: f64,
    pub sedation: f64,
    pub dizziness: f64,
    pub itching: f64,
    pub urinary_retention: f64,
    pub confusion: f64,
    pub hallucinations: f64,
    pub respiratory_depression: f64,
    pub rescue_naloxone: f64,
    pub rescue_antiemetic: f64,
}

impl Default for OradeWeights {
    fn default() -> Self {
        OradeWeights {
            nausea: 1.0,
            vomiting: 1.0,
            sedation: 1.0,
            dizziness: 1.0,
            itching: 1.0,
            urinary_retention: 1.0,
            confusion: 1.0,
            hallucinations: 1.0,
            respiratory_depression: 3.0,
            rescue_naloxone: 1.0,
            rescue_antiemetic: 1.0,
        }
    }
}

impl OradeWeights {
    pub fn as_array(&self) -> [f64; 11] {
        [
            self.nausea,
            self.vomiting,
            self.sedation,
            self.dizziness,
            self.itching,
            self.urinary_retention,
            self.confusion,
            self.hallucinations,
            self.respiratory_depression,
            self.rescue_naloxone,
            self.rescue_antiemetic,
        ]
    }
}

/// Weighted mean of component severities, scaled to 0..10.
pub fn orade_severity(rec: &OradeRecord, weights: &OradeWeights) -> Result<f64> {
    let w = weights.as_array();
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::field("weights", "severity weights must be finite and >= 0"));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let num: f64 = w.iter().zip(rec.severities()).map(|(w, s)| w * s).sum();
    Ok((10.0 * num / total).clamp(0.0, 10.0))
}

pub const RR_THRESHOLD: f64 = 10.0;
pub const SPO2_THRESHOLD: f64 = 90.0;
pub const DEPRESSION_MINUTES: f64 = 10.0;

/// Respiratory depression: naloxone given, or (when staff consider it
/// opioid-induced) a run of respiratory rate < 10/min or SpO2 < 90% lasting
/// at least ten minutes.
///
/// Series are `(minute, value)` samples; each value holds until the next
/// sample, and a run still open at the last sample ends there.
pub fn derive_respiratory_depression(
    naloxone_used: bool,
    rr_series: &[(f64, f64)],
    spo2_series: &[(f64, f64)],
    perceived_opioid_induced: bool,
) -> Result<bool> {
    check_series("rr", rr_series)?;
    check_series("spo2", spo2_series)?;
    if naloxone_used {
        return Ok(true);
    }
    Ok(perceived_opioid_induced
        && (longest_run_below(rr_series, RR_THRESHOLD) >= DEPRESSION_MINUTES
            || longest_run_below(spo2_series, SPO2_THRESHOLD) >= DEPRESSION_MINUTES))
}

fn check_series(name: &str, s: &[(f64, f64)]) -> Result<()> {
    for (i, &(t, v)) in s.iter().enumerate() {
        if !t.is_finite() || !v.is_finite() {
            return Err(Error::MalformedSeries(format!("{name}[{i}] is not finite")));
        }
        if i > 0 && t <= s[i - 1].0 {
            return Err(Error::MalformedSeries(format!(
                "{name} timestamps not strictly increasing at index {i}"
            )));
        }
    }
    Ok(())
}

fn longest_run_below(s: &[(f64, f64)], threshold: f64) -> f64 {
    let mut best = 0.0f64;
    let mut start: Option<f64> = None;
    for &(t, v) in s {
        match (v < threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(t0)) => {
                best = best.max(t - t0);
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(t0), Some(&(last, _))) = (start, s.last()) {
        best = best.max(last - t0);
    }
    best
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    #[default]
    Iv,
}

/// Opiate name to MEQ factor, per route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionTable {
    pub version: String,
    pub iv: BTreeMap<String, f64>,
}

impl Default for ConversionTable {
    /// Morphine 1, fentanyl 100. Defaults for experimentation, not dosing advice.
    fn default() -> Self {
        ConversionTable {
            version: "1".into(),
            iv: BTreeMap::from([("morphine".into(), 1.0), ("fentanyl".into(), 100.0)]),
        }
    }
}

impl ConversionTable {
    pub fn factor(&self, opiate: &str, route: Route) -> Result<f64> {
        match route {
            Route::Iv => self
                .iv
                .get(opiate)
                .copied()
                .ok_or_else(|| Error::UnknownOpiate(opiate.to_string())),
        }
    }
}

pub fn to_meq(table: &ConversionTable, opiate: &str, dose_mg: f64, route: Route) -> Result<DoseMeq> {
    if !(dose_mg.is_finite() && dose_mg >= 0.0) {
        return Err(Error::field("dose", format!("{dose_mg} is not a non-negative dose")));
    }
    Ok(DoseMeq(dose_mg * table.factor(opiate, route)?))
}

/// One intraoperative bolus, timed in minutes relative to the end of surgery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Administration {
    pub opiate: String,
    pub dose_mg: f64,
    pub minute: f64,
}

/// Boluses given within `[start_min, end_min]` (relative to surgery end)
/// count toward the end-of-surgery dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionWindow {
    pub start_min: f64,
    pub end_min: f64,
}

impl Default for AttributionWindow {
    fn default() -> Self {
        AttributionWindow {
            start_min: -30.0,
            end_min: 0.0,
        }
    }
}

impl AttributionWindow {
    pub fn contains(&self, minute: f64) -> bool {
        minute >= self.start_min && minute <= self.end_min
    }
}

/// Total MEQ of the boluses inside the attribution window.
pub fn aggregate_titrated_administrations(
    admins: &[Administration],
    table: &ConversionTable,
    window: AttributionWindow,
) -> Result<DoseMeq> {
    let mut terms = Vec::with_capacity(admins.len());
    for a in admins {
        let meq = to_meq(table, &a.opiate, a.dose_mg, Route::Iv)?;
        if window.contains(a.minute) {
            terms.push(meq.0);
        }
    }
    // Summation order is fixed so the total does not depend on input order.
    terms.sort_by(f64::total_cmp);
    Ok(DoseMeq(terms.iter().sum()))
}

/// Relative importance of pain and adverse events in the utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub w_pain: f64,
    pub w_orades: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            w_pain: 0.5,
            w_orades: 0.5,
        }
    }
}

impl UtilityWeights {
    pub fn new(w_pain: f64, w_orades: f64) -> Result<Self> {
        let w = UtilityWeights { w_pain, w_orades };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_pain.is_finite() && self.w_pain >= 0.0) {
            return Err(Error::field("w_pain", "must be finite and >= 0"));
        }
        if !(self.w_orades.is_finite() && self.w_orades >= 0.0) {
            return Err(Error::field("w_orades", "must be finite and >= 0"));
        }
        if self.w_pain + self.w_orades <= 0.0 {
            return Err(Error::field("weights", "w_pain + w_orades must be > 0"));
        }
        Ok(())
    }

    /// Parses `w_pain,w_orades`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
        match nums.as_deref() {
            Some(&[a, b]) => UtilityWeights::new(a, b),
            _ => Err(Error::field("weights", format!("expected w_pain,w_orades, got `{s}`"))),
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        UtilityWeights {
            w_pain: c * self.w_pain,
            w_orades: c * self.w_orades,
        }
    }
}

/// Which pain assessment serves as the modelled pain outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PainTimepoint {
    #[default]
    Arrival,
    Discharge,
}

/// One surgical encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub case_id: u64,
    pub features: CaseFeatures,
    pub treatment: Treatment,
    /// End-of-surgery dose, MEQ.
    pub administered_dose: f64,
    pub pain_arrival: PainScore,
    pub pain_pre_dosing: Vec<PainScore>,
    pub pain_discharge: PainScore,
    pub orades: OradeRecord,
    pub rescue_analgesia_meq: f64,
    /// Minutes until discharge readiness.
    pub pacu_los: f64,
    pub ambulation_cas: u8,
}

impl EncounterRecord {
    pub fn validate(&self, n_surgery_types: u32, registry: &TreatmentRegistry) -> Result<()> {
        self.features.validate(n_surgery_types)?;
        registry.check(self.treatment)?;
        if !(self.administered_dose.is_finite() && self.administered_dose >= 0.0) {
            return Err(Error::field("administered_dose", "must be finite and >= 0"));
        }
        self.orades.validate()?;
        if !(self.rescue_analgesia_meq.is_finite() && self.rescue_analgesia_meq >= 0.0) {
            return Err(Error::field("rescue_analgesia_meq", "must be finite and >= 0"));
        }
        if !(self.pacu_los.is_finite() && self.pacu_los >= 0.0) {
            return Err(Error::field("pacu_los", "must be finite and >= 0"));
        }
        if self.ambulation_cas > 6 {
            return Err(Error::field("ambulation_cas", format!("{} outside 0..=6", self.ambulation_cas)));
        }
        Ok(())
    }

    pub fn pain(&self, at: PainTimepoint) -> PainScore {
        match at {
            PainTimepoint::Arrival => self.pain_arrival,
            PainTimepoint::Discharge => self.pain_discharge,
        }
    }
}
