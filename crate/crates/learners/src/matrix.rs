use serde::{Deserialize, Serialize};

use crate::schema::ColumnSpec;
use crate::{LearnerError, Result};

/// Raw, named feature columns in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    columns: Vec<ColumnSpec>,
    rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<ColumnSpec>, data: Vec<f64>) -> Result<Self> {
        let width = columns.len();
        if width == 0 {
            return Err(LearnerError::DimensionMismatch("no feature columns".into()));
        }
        if !data.len().is_multiple_of(width) {
            return Err(LearnerError::DimensionMismatch(format!(
                "{} values do not fill rows of width {width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("features"));
        }
        Ok(Self {
            rows: data.len() / width,
            columns,
            data,
        })
    }

    /// Builds a matrix of continuous columns named `x0..x{p-1}`.
    pub fn continuous(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(LearnerError::DimensionMismatch("ragged rows".into()));
        }
        let columns = (0..width)
            .map(|j| ColumnSpec::continuous(format!("x{j}")))
            .collect();
        Self::new(columns, rows.concat())
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            columns: self.columns.clone(),
            rows: idx.len(),
            data,
        }
    }
}

/// Encoded numeric design matrix used internally by the learners.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dense {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Dense {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}
