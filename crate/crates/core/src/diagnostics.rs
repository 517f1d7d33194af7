//! Overlap (positivity) diagnostic.
//!
//! Cases are stratified by quantiles of [`severity_score`] and doses are cut
//! into equal-width bins over the grid. A (stratum, bin) cell holding fewer
//! than `min_count` training cases is a violation: dose effects there are
//! extrapolated rather than learned.

use serde::{Deserialize, Serialize};

use crate::domain::{CaseFeatures, DoseGrid, EncounterRecord};
use crate::strata::{severity_score, Strata};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub n_strata: usize,
    pub n_dose_bins: usize,
    pub min_count: usize,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            n_strata: 5,
            n_dose_bins: 10,
            min_count: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCell {
    pub stratum: usize,
    pub bin: usize,
    pub dose_lo: f64,
    pub dose_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub config: OverlapConfig,
    pub strata: Strata,
    pub dose_min: f64,
    pub dose_max: f64,
    /// Row-major over (stratum, bin); counts sum to the cohort size.
    pub cells: Vec<OverlapCell>,
    /// `(stratum, bin)` of every cell with `count < min_count`.
    pub violations: Vec<(usize, usize)>,
}

impl OverlapReport {
    pub fn bin_of(&self, d: f64) -> usize {
        dose_bin(d, self.dose_min, self.dose_max, self.config.n_dose_bins)
    }

    pub fn stratum_of(&self, x: &CaseFeatures) -> usize {
        self.strata.of(x)
    }

    pub fn is_violated(&self, stratum: usize, bin: usize) -> bool {
        self.violations.contains(&(stratum, bin))
    }

    /// Whether recommending dose `d` to case `x` lands in a violated cell.
    pub fn flags(&self, x: &CaseFeatures, d: f64) -> bool {
        self.is_violated(self.stratum_of(x), self.bin_of(d))
    }
}

fn dose_bin(d: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    let width = (hi - lo) / n_bins as f64;
    (((d - lo) / width).floor().max(0.0) as usize).min(n_bins - 1)
}

pub fn overlap_diagnostic(
    records: &[EncounterRecord],
    grid: &DoseGrid,
    cfg: OverlapConfig,
) -> Result<OverlapReport> {
    if cfg.n_strata == 0 || cfg.n_dose_bins == 0 {
        return Err(Error::InvalidConfig("n_strata and n_dose_bins must be >= 1".into()));
    }
    let min = cfg.n_strata * cfg.n_dose_bins;
    if records.len() < min {
        return Err(Error::TooSmall {
            min,
            got: records.len(),
        });
    }
    let scores: Vec<f64> = records.iter().map(|r| severity_score(&r.features)).collect();
    let strata = Strata::fit(&scores, cfg.n_strata);
    let (lo, hi) = (grid.min(), grid.max());
    let width = (hi - lo) / cfg.n_dose_bins as f64;
    let mut counts = vec![0usize; cfg.n_strata * cfg.n_dose_bins];
    for (r, &s) in records.iter().zip(&scores) {
        let k = strata.assign(s);
        let b = dose_bin(r.administered_dose, lo, hi, cfg.n_dose_bins);
        counts[k * cfg.n_dose_bins + b] += 1;
    }
    let mut cells = Vec::with_capacity(counts.len());
    let mut violations = Vec::new();
    for stratum in 0..cfg.n_strata {
        for bin in 0..cfg.n_dose_bins {
            let count = counts[stratum * cfg.n_dose_bins + bin];
            if count < cfg.min_count {
                violations.push((stratum, bin));
            }
            cells.push(OverlapCell {
                stratum,
                bin,
                dose_lo: lo + bin as f64 * width,
                dose_hi: lo + (bin + 1) as f64 * width,
                count,
            });
        }
    }
    Ok(OverlapReport {
        config: cfg,
        strata,
        dose_min: lo,
        dose_max: hi,
        cells,
        violations,
    })
}

/// What a recommendation is checked against besides the model itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsContext {
    pub overlap: Option<OverlapReport>,
}
