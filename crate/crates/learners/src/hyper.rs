use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{LearnerError, Result};

/// Key-value hyperparameters. Unknown keys are rejected by each learner so a
/// typo cannot silently fall back to a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyper(pub BTreeMap<String, f64>);

impl Hyper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub(crate) fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.0.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(LearnerError::InvalidHyper {
                    key: key.clone(),
                    reason: format!("unknown key (expected one of {allowed:?})"),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn float(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.0.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(LearnerError::InvalidHyper {
                key: key.into(),
                reason: "not finite".into(),
            });
        }
        Ok(v)
    }

    pub(crate) fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.float(key, default)?;
        if v <= 0.0 {
            return Err(LearnerError::InvalidHyper {
                key: key.into(),
                reason: format!("must be > 0, got {v}"),
            });
        }
        Ok(v)
    }

    pub(crate) fn non_negative(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.float(key, default)?;
        if v < 0.0 {
            return Err(LearnerError::InvalidHyper {
                key: key.into(),
                reason: format!("must be >= 0, got {v}"),
            });
        }
        Ok(v)
    }

    pub(crate) fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.float(key, default as f64)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(LearnerError::InvalidHyper {
                key: key.into(),
                reason: format!("must be a positive integer, got {v}"),
            });
        }
        Ok(v as usize)
    }

    /// Fraction in (0, 1].
    pub(crate) fn fraction(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.float(key, default)?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(LearnerError::InvalidHyper {
                key: key.into(),
                reason: format!("must be in (0, 1], got {v}"),
            });
        }
        Ok(v)
    }

    /// Tree depth; `0` means unbounded.
    pub(crate) fn depth(&self, key: &str, default: Option<usize>) -> Result<Option<usize>> {
        let v = self.float(key, default.map_or(0.0, |d| d as f64))?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(LearnerError::InvalidHyper {
                key: key.into(),
                reason: format!("must be a non-negative integer, got {v}"),
            });
        }
        Ok(if v == 0.0 { None } else { Some(v as usize) })
    }
}
