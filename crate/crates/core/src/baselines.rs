//! Non-causal comparison methods.
//!
//! * Rule-based calculator: the administered dose adjusted by the first rule
//!   matching the observed early pain, adverse-event severity and respiratory
//!   depression.
//! * Proxy markers: how strongly a recommender's deviation from the
//!   administered dose tracks PACU length of stay and ambulation, plus a
//!   recommender that minimizes predicted length of stay and a seeded
//!   random-dose reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use opiaid_learners::{predict, sub_seed, train, FeatureMatrix, FittedModel, Hyper, LearnerKind};

use crate::cadr::{design_columns, design_row};
use crate::domain::{
    aggregate_titrated_administrations, orade_severity, Administration, AttributionWindow,
    CaseFeatures, ConversionTable, DoseGrid, DoseMeq, EncounterRecord, OradeRecord, OradeWeights,
    PainScore, Treatment, TreatmentRegistry,
};
use crate::{Error, Result};

/// Matching condition and dose adjustment of one rule. Unset bounds match
/// everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    #[serde(default)]
    pub pain_min: u8,
    #[serde(default = "ten")]
    pub pain_max: u8,
    /// Severity must be strictly above this.
    #[serde(default)]
    pub severity_above: Option<f64>,
    /// Severity must be at most this.
    #[serde(default)]
    pub severity_at_most: Option<f64>,
    #[serde(default)]
    pub respiratory_depression: Option<bool>,
    pub adjustment_meq: f64,
}

fn ten() -> u8 {
    10
}

fn twenty() -> f64 {
    20.0
}

impl Rule {
    pub fn matches(&self, pain: u8, severity: f64, respiratory_depression: bool) -> bool {
        (self.pain_min..=self.pain_max).contains(&pain)
            && self.severity_above.is_none_or(|lo| severity > lo)
            && self.severity_at_most.is_none_or(|hi| severity <= hi)
            && self
                .respiratory_depression
                .is_none_or(|r| r == respiratory_depression)
    }
}

/// Ordered rules; the first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub severity_weights: OradeWeights,
    /// Results are clamped to `[0, max_dose]`.
    #[serde(default = "twenty")]
    pub max_dose: f64,
}

/// Upper edge of the lowest adverse-event severity band (severity in thirds).
pub const MILD_SEVERITY_BAND: f64 = 10.0 / 3.0;

impl Default for RuleTable {
    fn default() -> Self {
        let rule = |name: &str, pain_min, pain_max, adjustment_meq| Rule {
            name: name.into(),
            pain_min,
            pain_max,
            severity_above: None,
            severity_at_most: None,
            respiratory_depression: None,
            adjustment_meq,
        };
        RuleTable {
            rules: vec![
                Rule {
                    respiratory_depression: Some(true),
                    ..rule("respiratory_depression", 0, 10, -4.0)
                },
                rule("severe_pain", 7, 10, 4.0),
                rule("moderate_pain", 4, 6, 2.0),
                rule("mild_pain", 1, 3, 0.0),
                Rule {
                    severity_above: Some(MILD_SEVERITY_BAND),
                    ..rule("no_pain_adverse_events", 0, 0, -2.0)
                },
                rule("no_pain", 0, 0, 0.0),
            ],
            severity_weights: OradeWeights::default(),
            max_dose: 20.0,
        }
    }
}

impl RuleTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_dose.is_finite() && self.max_dose >= 0.0) {
            return Err(Error::InvalidConfig("rule table max_dose must be >= 0".into()));
        }
        for r in &self.rules {
            if !r.adjustment_meq.is_finite() {
                return Err(Error::InvalidConfig(format!("rule `{}`: non-finite adjustment", r.name)));
            }
        }
        Ok(())
    }

    pub fn first_match(&self, pain: u8, severity: f64, respiratory_depression: bool) -> Option<&Rule> {
        self.rules
            .iter()
            .find(|r| r.matches(pain, severity, respiratory_depression))
    }

    /// Every (pain, severity band, respiratory flag) combination has a
    /// matching rule. Severities probed: band edges, just above them and band
    /// interiors.
    pub fn is_exhaustive(&self) -> bool {
        let third = MILD_SEVERITY_BAND;
        let probes = [0.0, 1.0, third, third + 1e-9, 5.0, 2.0 * third, 2.0 * third + 1e-9, 8.5, 10.0];
        (0..=10u8).all(|p| {
            probes
                .iter()
                .all(|&s| [false, true].iter().all(|&r| self.first_match(p, s, r).is_some()))
        })
    }
}

/// The administered dose adjusted by the first matching rule, clamped to
/// `[0, table.max_dose]`.
pub fn rule_based_optimal_dose(
    administered: f64,
    pain_0_1h: PainScore,
    orades: &OradeRecord,
    table: &RuleTable,
) -> Result<DoseMeq> {
    if !(administered.is_finite() && administered >= 0.0) {
        return Err(Error::field("administered", "must be finite and >= 0"));
    }
    let severity = orade_severity(orades, &table.severity_weights)?;
    let rd = orades.respiratory_depression;
    let rule = table
        .first_match(pain_0_1h.nrs(), severity, rd)
        .ok_or(Error::NoMatchingRule {
            pain: pain_0_1h.nrs(),
            severity,
            respiratory_depression: rd,
        })?;
    Ok(DoseMeq((administered + rule.adjustment_meq).clamp(0.0, table.max_dose)))
}

/// Rule-based dose when the intraoperative dose is given as individual boluses.
pub fn rule_based_from_administrations(
    admins: &[Administration],
    conversion: &ConversionTable,
    window: AttributionWindow,
    pain_0_1h: PainScore,
    orades: &OradeRecord,
    table: &RuleTable,
) -> Result<DoseMeq> {
    let administered = aggregate_titrated_administrations(admins, conversion, window)?;
    rule_based_optimal_dose(administered.0, pain_0_1h, orades, table)
}

/// Correlation of dose deviation with one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    /// Least-squares slope of the outcome on the deviation.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub n: usize,
    /// Deviations have zero variance, so no association is defined.
    pub degenerate: bool,
    pub pacu_los: Association,
    pub ambulation_cas: Association,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub case_id: u64,
    pub administered: f64,
    pub recommended: f64,
    pub deviation: f64,
    pub pacu_los: f64,
    pub ambulation_cas: u8,
}

pub const MIN_PROXY_RECORDS: usize = 10;

/// Per-record `|administered - recommended|` alongside the proxy outcomes.
pub fn proxy_deviations<F>(records: &[EncounterRecord], recommender: F) -> Result<Vec<Deviation>>
where
    F: Fn(&EncounterRecord) -> Result<f64>,
{
    records
        .iter()
        .map(|r| {
            let rec = recommender(r)?;
            Ok(Deviation {
                case_id: r.case_id,
                administered: r.administered_dose,
                recommended: rec,
                deviation: (r.administered_dose - rec).abs(),
                pacu_los: r.pacu_los,
                ambulation_cas: r.ambulation_cas,
            })
        })
        .collect()
}

pub fn proxy_marker_score<F>(records: &[EncounterRecord], recommender: F) -> Result<ProxyReport>
where
    F: Fn(&EncounterRecord) -> Result<f64>,
{
    if records.len() < MIN_PROXY_RECORDS {
        return Err(Error::InsufficientData(format!(
            "proxy analysis needs at least {MIN_PROXY_RECORDS} records, got {}",
            records.len()
        )));
    }
    let devs = proxy_deviations(records, recommender)?;
    let dev: Vec<f64> = devs.iter().map(|d| d.deviation).collect();
    let los: Vec<f64> = devs.iter().map(|d| d.pacu_los).collect();
    let cas: Vec<f64> = devs.iter().map(|d| d.ambulation_cas as f64).collect();
    let degenerate = variance(&dev) == 0.0;
    Ok(ProxyReport {
        n: devs.len(),
        degenerate,
        pacu_los: associate(&dev, &los),
        ambulation_cas: associate(&dev, &cas),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

fn associate(dev: &[f64], outcome: &[f64]) -> Association {
    let var = variance(dev);
    let slope = (var > 0.0).then(|| {
        let (mx, my) = (mean(dev), mean(outcome));
        dev.iter().zip(outcome).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / dev.len() as f64 / var
    });
    Association {
        pearson_r: pearson(dev, outcome),
        spearman_rho: spearman(dev, outcome),
        slope,
    }
}

/// A uniformly random grid dose, reproducible per `(seed, case_id)`.
pub fn random_dose(grid: &DoseGrid, seed: u64, case_id: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, case_id));
    grid.point(rng.random_range(0..grid.len()))
}

/// Recommends the grid dose with the shortest predicted PACU stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosRecommender {
    pub model: FittedModel,
    pub grid: DoseGrid,
    pub registry: TreatmentRegistry,
    pub n_surgery_types: u32,
}

impl LosRecommender {
    pub fn fit(
        records: &[EncounterRecord],
        grid: DoseGrid,
        registry: &TreatmentRegistry,
        n_surgery_types: u32,
        kind: LearnerKind,
        hyper: &Hyper,
        seed: u64,
    ) -> Result<Self> {
        let cols = design_columns(registry, n_surgery_types);
        let data = records
            .iter()
            .flat_map(|r| design_row(r.treatment, r.administered_dose, &r.features))
            .collect();
        let x = FeatureMatrix::new(cols, data)?;
        let y: Vec<f64> = records.iter().map(|r| r.pacu_los).collect();
        Ok(LosRecommender {
            model: train(kind, &x, &y, hyper, sub_seed(seed, 2))?,
            grid,
            registry: registry.clone(),
            n_surgery_types,
        })
    }

    /// Grid dose minimizing predicted length of stay; ties go to the lowest dose.
    pub fn recommend(&self, t: Treatment, x: &CaseFeatures) -> Result<f64> {
        self.registry.check(t)?;
        x.validate(self.n_surgery_types)?;
        let doses = self.grid.points();
        let data = doses.iter().flat_map(|&d| design_row(t, d, x)).collect();
        let m = FeatureMatrix::new(design_columns(&self.registry, self.n_surgery_types), data)?;
        let los = predict(&self.model, &m)?.expected_values();
        let mut best = 0;
        for (i, &v) in los.iter().enumerate() {
            if v < los[best] {
                best = i;
            }
        }
        Ok(doses[best])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_pain;

    #[test]
    fn default_table_examples() {
        let t = RuleTable::default();
        let none = OradeRecord::default();
        let p = |v| validate_pain(v).unwrap();
        assert_eq!(rule_based_optimal_dose(10.0, p(5), &none, &t).unwrap().0, 12.0);
        assert_eq!(rule_based_optimal_dose(10.0, p(0), &none, &t).unwrap().0, 10.0);
        let rd = OradeRecord {
            respiratory_depression: true,
            ..Default::default()
        };
        assert_eq!(rule_based_optimal_dose(1.0, p(8), &rd, &t).unwrap().0, 0.0);
        assert_eq!(rule_based_optimal_dose(19.0, p(9), &none, &t).unwrap().0, 20.0);
        assert!(t.is_exhaustive());
    }

    #[test]
    fn first_match_wins_and_gaps_are_reported() {
        let table = RuleTable {
            rules: vec![
                Rule {
                    name: "a".into(),
                    pain_min: 3,
                    pain_max: 6,
                    severity_above: None,
                    severity_at_most: None,
                    respiratory_depression: None,
                    adjustment_meq: 1.0,
                },
                Rule {
                    name: "b".into(),
                    pain_min: 5,
                    pain_max: 10,
                    severity_above: None,
                    severity_at_most: None,
                    respiratory_depression: None,
                    adjustment_meq: 3.0,
                },
            ],
            ..Default::default()
        };
        let none = OradeRecord::default();
        let p = |v| validate_pain(v).unwrap();
        assert_eq!(rule_based_optimal_dose(5.0, p(5), &none, &table).unwrap().0, 6.0);
        assert_eq!(rule_based_optimal_dose(5.0, p(8), &none, &table).unwrap().0, 8.0);
        assert!(matches!(
            rule_based_optimal_dose(5.0, p(1), &none, &table),
            Err(Error::NoMatchingRule { pain: 1, .. })
        ));
        assert!(!table.is_exhaustive());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 90.0]), Some(1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
