//! Utility of predicted outcomes and utility-maximizing dose selection.
//!
//! `U = -(w_pain * pain + w_orades * orade)`; the recommended dose is the grid
//! point of highest expected utility. Grid points whose utility is within a
//! relative `1e-12` of the maximum count as ties and the lowest such dose
//! wins, so rescaling the weights never moves the recommendation.

use serde::{Deserialize, Serialize};

use crate::cadr::{cadr_curve, predict_outcomes, CadrCurve, CadrModel};
use crate::diagnostics::DiagnosticsContext;
use crate::domain::{CaseFeatures, Treatment, UtilityWeights};
use crate::Result;

pub const TIE_TOLERANCE: f64 = 1e-12;
pub const FLAT_UTILITY: f64 = 1e-6;

pub fn utility(pain: f64, orade: f64, w: UtilityWeights) -> f64 {
    0.0 - (w.w_pain * pain + w.w_orades * orade)
}

/// Utility with an additional rescue-analgesia penalty. Experimental: the
/// dose recommender does not use it.
pub fn utility_with_rescue(pain: f64, orade: f64, rescue_meq: f64, w: UtilityWeights, w_rescue: f64) -> f64 {
    utility(pain, orade, w) - w_rescue * rescue_meq
}

/// Utility of the expected outcomes at dose `d`. For ensembles the expected
/// outcome is the member mean; utility is linear, so this equals the mean of
/// the member utilities.
pub fn expected_utility(
    model: &CadrModel,
    t: Treatment,
    d: f64,
    x: &CaseFeatures,
    w: UtilityWeights,
) -> Result<f64> {
    w.validate()?;
    let o = predict_outcomes(model, t, d, x)?;
    Ok(utility(o.pain, o.orade, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    OverlapViolation,
    ExtrapolatedDose,
    FlatUtility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub dose_meq: f64,
    pub expected_utility: f64,
    pub pain_at_dose: f64,
    pub orade_at_dose: f64,
    pub weights: UtilityWeights,
    pub warnings: Vec<Warning>,
}

/// Index of the best utility; near-ties resolve to the lowest index.
pub fn argmax_utility(utility: &[f64]) -> usize {
    let max = utility.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * max.abs().max(1.0);
    utility.iter().position(|&u| u >= max - tol).unwrap_or(0)
}

/// Picks the dose from an already evaluated curve.
pub fn recommend_from_curve(
    model: &CadrModel,
    curve: &CadrCurve,
    x: &CaseFeatures,
    w: UtilityWeights,
    ctx: &DiagnosticsContext,
) -> Recommendation {
    let i = argmax_utility(&curve.utility);
    let dose = curve.doses[i];
    let mut warnings = Vec::new();
    if ctx.overlap.as_ref().is_some_and(|o| o.flags(x, dose)) {
        warnings.push(Warning::OverlapViolation);
    }
    if !model.dose_support.contains(dose) {
        warnings.push(Warning::ExtrapolatedDose);
    }
    let (lo, hi) = curve
        .utility
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| (lo.min(u), hi.max(u)));
    if hi - lo < FLAT_UTILITY {
        warnings.push(Warning::FlatUtility);
    }
    Recommendation {
        dose_meq: dose,
        expected_utility: curve.utility[i],
        pain_at_dose: curve.pain_hat[i],
        orade_at_dose: curve.orade_hat[i],
        weights: w,
        warnings,
    }
}

pub fn recommend_dose(
    model: &CadrModel,
    x: &CaseFeatures,
    t: Treatment,
    w: UtilityWeights,
    ctx: &DiagnosticsContext,
) -> Result<Recommendation> {
    let curve = cadr_curve(model, x, t, w)?;
    Ok(recommend_from_curve(model, &curve, x, w, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_examples() {
        let w = |a, b| UtilityWeights::new(a, b).unwrap();
        assert_eq!(utility(0.0, 0.0, w(0.3, 0.7)), 0.0);
        assert!(utility(0.0, 0.0, w(0.3, 0.7)).is_sign_positive());
        assert_eq!(utility(3.0, 0.0, w(1.0, 0.0)), -3.0);
        assert_eq!(utility(4.0, 2.0, w(0.5, 0.5)), -3.0);
        assert_eq!(utility_with_rescue(4.0, 2.0, 5.0, w(0.5, 0.5), 0.0), -3.0);
        assert_eq!(utility_with_rescue(4.0, 2.0, 5.0, w(0.5, 0.5), 0.2), -4.0);
    }

    #[test]
    fn argmax_prefers_lowest_dose_on_ties() {
        assert_eq!(argmax_utility(&[-1.0, -1.0, -1.0]), 0);
        assert_eq!(argmax_utility(&[-3.0, -1.0, -2.0, -1.0]), 1);
        assert_eq!(argmax_utility(&[-3.0, -2.0, -1.0]), 2);
    }
}
