//! Case-severity score and quantile strata.
//!
//! The score is an affine map of standardized features:
//!
//! ```text
//! score = 0.5 z_age + 0.5 (asa - 2) + 0.3 (comorbidity - 1.5) + 0.3 z_duration
//! z_age = (age - 55) / 16,  z_duration = ln(duration / 120) / 0.5
//! ```

use serde::{Deserialize, Serialize};

use crate::domain::CaseFeatures;

pub fn severity_score(x: &CaseFeatures) -> f64 {
    let z_age = (x.age as f64 - 55.0) / 16.0;
    let z_dur = (x.surgery_duration / 120.0).ln() / 0.5;
    0.5 * z_age + 0.5 * (x.asa_class as f64 - 2.0) + 0.3 * (x.comorbidity_score - 1.5) + 0.3 * z_dur
}

/// Lower edges of strata 1..n (stratum 0 is everything below the first edge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub edges: Vec<f64>,
}

impl Strata {
    /// Empirical quantile edges: edge k is the `floor(k n / n_strata)`-th
    /// smallest score.
    pub fn fit(scores: &[f64], n_strata: usize) -> Self {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let edges = if n == 0 {
            Vec::new()
        } else {
            (1..n_strata.max(1)).map(|k| sorted[k * n / n_strata]).collect()
        };
        Strata { edges }
    }

    pub fn n_strata(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn assign(&self, score: f64) -> usize {
        self.edges.iter().take_while(|&&e| score >= e).count()
    }

    pub fn of(&self, x: &CaseFeatures) -> usize {
        self.assign(severity_score(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_strata_are_balanced() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let s = Strata::fit(&scores, 5);
        assert_eq!(s.edges, vec![20.0, 40.0, 60.0, 80.0]);
        let mut counts = [0; 5];
        for &v in &scores {
            counts[s.assign(v)] += 1;
        }
        assert_eq!(counts, [20; 5]);
        assert_eq!(Strata::fit(&scores, 1).n_strata(), 1);
    }
}
