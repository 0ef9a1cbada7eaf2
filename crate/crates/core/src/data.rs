//! Point-treatment data and realized treatment rules.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OdtrError, Result};

/// `n` observations of covariates `W` (n × p), binary treatment `A`, and an
/// outcome `Y` already scaled to `[0, 1]`. Larger `Y` is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    w: DMatrix<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(w: DMatrix<f64>, a: Vec<u8>, y: Vec<f64>, column_names: Vec<String>) -> Result<Self> {
        let n = w.nrows();
        let p = w.ncols();
        if n == 0 {
            return Err(OdtrError::InvalidData("dataset has no rows".into()));
        }
        if p == 0 {
            return Err(OdtrError::InvalidData("dataset has no covariates".into()));
        }
        if a.len() != n {
            return Err(OdtrError::DimensionMismatch { expected: n, got: a.len() });
        }
        if y.len() != n {
            return Err(OdtrError::DimensionMismatch { expected: n, got: y.len() });
        }
        if column_names.len() != p {
            return Err(OdtrError::DimensionMismatch { expected: p, got: column_names.len() });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(OdtrError::InvalidData("non-finite covariate value".into()));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(OdtrError::InvalidData(format!("treatment at row {i} is not 0 or 1")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(OdtrError::InvalidData(format!("outcome at row {i} is outside [0, 1]")));
        }
        Ok(Self { w, a, y, column_names })
    }

    /// Builds a dataset with default column names `W1..Wp`.
    pub fn from_parts(w: DMatrix<f64>, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let names = default_column_names(w.ncols());
        Self::new(w, a, y, names)
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.w.row(i).iter().copied().collect()
    }

    /// Rows in the given order; indices may repeat.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let w = self.w.select_rows(rows);
        let a = rows.iter().map(|&i| self.a[i]).collect();
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Dataset { w, a, y, column_names: self.column_names.clone() }
    }

    /// Same covariates and treatment with a replaced outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.w.clone(), self.a.clone(), y, self.column_names.clone())
    }

    pub fn treated_count(&self) -> usize {
        self.a.iter().filter(|&&a| a == 1).count()
    }
}

pub fn default_column_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("W{j}")).collect()
}

/// A realized treatment rule on a set of rows: every entry is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentRule(Vec<u8>);

impl TreatmentRule {
    pub fn new(assignments: Vec<u8>) -> Result<Self> {
        if let Some(i) = assignments.iter().position(|&d| d > 1) {
            return Err(OdtrError::InvalidData(format!("rule assignment at row {i} is not 0 or 1")));
        }
        Ok(Self(assignments))
    }

    pub fn constant(value: u8, n: usize) -> Self {
        Self(vec![value.min(1); n])
    }

    /// Rowwise `blip > 0`; a blip of exactly zero assigns control.
    pub fn from_blip(blip: &[f64]) -> Self {
        Self(blip.iter().map(|&b| u8::from(b > 0.0)).collect())
    }

    pub fn assignments(&self) -> &[u8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn fraction_treated(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|&d| f64::from(d)).sum::<f64>() / self.0.len() as f64
    }
}
