//! Column specifications and the fit-time encoding stored with every model.

use serde::{Deserialize, Serialize};

use crate::matrix::{Dense, FeatureMatrix};
use crate::{LearnerError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ColumnKind {
    Continuous,
    /// Integer codes `0..levels`, one-hot encoded.
    Categorical { levels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: usize) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { levels },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "encoding")]
pub enum EncodedColumn {
    Standardized { name: String, mean: f64, sd: f64 },
    OneHot { name: String, levels: usize },
}

impl EncodedColumn {
    fn name(&self) -> &str {
        match self {
            EncodedColumn::Standardized { name, .. } | EncodedColumn::OneHot { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            EncodedColumn::Standardized { .. } => 1,
            EncodedColumn::OneHot { levels, .. } => *levels,
        }
    }
}

/// Ordered feature names plus the standardization constants learned at fit
/// time. Prediction refuses inputs whose columns differ from the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<EncodedColumn>,
}

impl FeatureSchema {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        let n = x.n_rows() as f64;
        let mut columns = Vec::with_capacity(x.n_cols());
        for (j, spec) in x.columns().iter().enumerate() {
            let col = match spec.kind {
                ColumnKind::Continuous => {
                    let mean = (0..x.n_rows()).map(|i| x.row(i)[j]).sum::<f64>() / n;
                    let var = (0..x.n_rows())
                        .map(|i| (x.row(i)[j] - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    let sd = if var > 1e-24 { var.sqrt() } else { 1.0 };
                    EncodedColumn::Standardized {
                        name: spec.name.clone(),
                        mean,
                        sd,
                    }
                }
                ColumnKind::Categorical { levels } => {
                    if levels == 0 {
                        return Err(LearnerError::SchemaMismatch(format!(
                            "column {} declares zero levels",
                            spec.name
                        )));
                    }
                    EncodedColumn::OneHot {
                        name: spec.name.clone(),
                        levels,
                    }
                }
            };
            columns.push(col);
        }
        let schema = Self { columns };
        schema.check(x)?;
        Ok(schema)
    }

    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(EncodedColumn::width).sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(EncodedColumn::name).collect()
    }

    fn check(&self, x: &FeatureMatrix) -> Result<()> {
        if x.n_cols() != self.columns.len() {
            return Err(LearnerError::SchemaMismatch(format!(
                "expected {} columns, got {}",
                self.columns.len(),
                x.n_cols()
            )));
        }
        for (enc, spec) in self.columns.iter().zip(x.columns()) {
            let kind_ok = match (enc, spec.kind) {
                (EncodedColumn::Standardized { .. }, ColumnKind::Continuous) => true,
                (EncodedColumn::OneHot { levels, .. }, ColumnKind::Categorical { levels: l }) => {
                    *levels == l
                }
                _ => false,
            };
            if enc.name() != spec.name || !kind_ok {
                return Err(LearnerError::SchemaMismatch(format!(
                    "column {:?} does not match schema column {:?}",
                    spec.name,
                    enc.name()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn encode(&self, x: &FeatureMatrix) -> Result<Dense> {
        self.check(x)?;
        let cols = self.encoded_width();
        let mut data = Vec::with_capacity(x.n_rows() * cols);
        for i in 0..x.n_rows() {
            for (enc, &v) in self.columns.iter().zip(x.row(i)) {
                match enc {
                    EncodedColumn::Standardized { mean, sd, .. } => data.push((v - mean) / sd),
                    EncodedColumn::OneHot { name, levels } => {
                        let code = v as usize;
                        if v < 0.0 || v.fract() != 0.0 || code >= *levels {
                            return Err(LearnerError::SchemaMismatch(format!(
                                "column {name}: category {v} outside 0..{levels}"
                            )));
                        }
                        data.extend((0..*levels).map(|l| if l == code { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        Ok(Dense {
            rows: x.n_rows(),
            cols,
            data,
        })
    }
}
