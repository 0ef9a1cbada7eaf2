//! Cross-validated TMLE of the mean outcome under a rule.
//!
//! Within each validation fold the training-fold `Q` is fluctuated on the
//! logit scale: `Q_ε(a, w) = expit(logit Q(a, w) + ε)`, with `ε` the weighted
//! intercept solving `Σ H_i (Y_i − Q_ε(A_i, W_i)) = 0` for
//! `H_i = I(A_i = d(W_i)) / g(A_i | W_i)`. The fold estimate is the mean of
//! `Q_ε(d(W_i), W_i)`; fold estimates are averaged with weights proportional
//! to fold size.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OdtrError, Result};
use crate::folds::FoldAssignment;
use crate::linalg::{expit, logit};
use crate::nuisance::NuisancePredictions;

/// Bounds applied to `Q` before taking logits.
pub const Q_CLAMP: (f64, f64) = (0.005, 0.995);
pub const NEWTON_MAX_STEPS: usize = 50;
pub const SCORE_TOL: f64 = 1e-10;

/// Observed data and training-fold nuisance predictions for every row, each
/// row predicted by the fits of the fold that excludes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvNuisance {
    pub folds: FoldAssignment,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub nuisance: NuisancePredictions,
    /// Pseudo-outcome evaluated with the training-fold nuisances.
    pub pseudo: Vec<f64>,
}

impl CvNuisance {
    pub fn new(folds: FoldAssignment, data: &Dataset, nuisance: NuisancePredictions) -> Result<Self> {
        let n = data.n();
        for len in
            [folds.n(), nuisance.q_observed.len(), nuisance.q1.len(), nuisance.q0.len(), nuisance.g_observed.len()]
        {
            if len != n {
                return Err(OdtrError::DimensionMismatch { expected: n, got: len });
            }
        }
        let pseudo = nuisance.pseudo_outcome(data);
        Ok(Self { folds, a: data.a().to_vec(), y: data.y().to_vec(), nuisance, pseudo })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldTmle {
    pub size: usize,
    pub epsilon: f64,
    pub estimate: f64,
    /// `mean(H (Y − Q_ε(A, W)))` at the returned `ε`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleEstimate {
    pub estimate: f64,
    pub folds: Vec<FoldTmle>,
}

/// Precomputed logits grouped by fold, reused across many rules.
#[derive(Debug, Clone)]
pub struct TmleEvaluator {
    fold_rows: Vec<Vec<usize>>,
    logit_q_obs: Vec<f64>,
    logit_q1: Vec<f64>,
    logit_q0: Vec<f64>,
    inv_g: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
}

fn clamped_logit(q: f64) -> f64 {
    logit(q.clamp(Q_CLAMP.0, Q_CLAMP.1))
}

impl TmleEvaluator {
    pub fn new(cv: &CvNuisance) -> Self {
        let fold_rows = (0..cv.folds.v()).map(|k| cv.folds.validation_rows(k)).collect();
        let nu = &cv.nuisance;
        Self {
            fold_rows,
            logit_q_obs: nu.q_observed.iter().map(|&q| clamped_logit(q)).collect(),
            logit_q1: nu.q1.iter().map(|&q| clamped_logit(q)).collect(),
            logit_q0: nu.q0.iter().map(|&q| clamped_logit(q)).collect(),
            inv_g: nu.g_observed.iter().map(|&g| 1.0 / g).collect(),
            a: cv.a.clone(),
            y: cv.y.clone(),
        }
    }

    fn score(&self, rows: &[usize], rule: &[u8], eps: f64) -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for &i in rows {
            if self.a[i] != rule[i] {
                continue;
            }
            let p = expit(self.logit_q_obs[i] + eps);
            s += self.inv_g[i] * (self.y[i] - p);
            ds -= self.inv_g[i] * p * (1.0 - p);
        }
        let m = rows.len() as f64;
        (s / m, ds / m)
    }

    fn solve_epsilon(&self, rows: &[usize], rule: &[u8]) -> (f64, f64) {
        if !rows.iter().any(|&i| self.a[i] == rule[i]) {
            return (0.0, 0.0);
        }
        let mut eps = 0.0;
        for _ in 0..NEWTON_MAX_STEPS {
            let (s, ds) = self.score(rows, rule, eps);
            if s.abs() < SCORE_TOL {
                return (eps, s);
            }
            if ds == 0.0 || !ds.is_finite() {
                break;
            }
            let next = eps - s / ds;
            if !next.is_finite() || next.abs() > 50.0 {
                break;
            }
            eps = next;
        }
        let (s, _) = self.score(rows, rule, eps);
        if s.abs() < SCORE_TOL {
            return (eps, s);
        }
        // Bisection fallback on a decreasing score.
        let (mut lo, mut hi) = (-50.0f64, 50.0f64);
        if self.score(rows, rule, lo).0 <= 0.0 {
            return (lo, self.score(rows, rule, lo).0);
        }
        if self.score(rows, rule, hi).0 >= 0.0 {
            return (hi, self.score(rows, rule, hi).0);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s = self.score(rows, rule, mid).0;
            if s.abs() < SCORE_TOL {
                return (mid, s);
            }
            if s > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        (mid, self.score(rows, rule, mid).0)
    }

    pub fn evaluate_detailed(&self, rule: &[u8]) -> TmleEstimate {
        let n: usize = self.fold_rows.iter().map(Vec::len).sum();
        let mut total = 0.0;
        let mut folds = Vec::with_capacity(self.fold_rows.len());
        for rows in &self.fold_rows {
            let (epsilon, score) = self.solve_epsilon(rows, rule);
            let estimate = rows
                .iter()
                .map(|&i| {
                    let lq = if rule[i] == 1 { self.logit_q1[i] } else { self.logit_q0[i] };
                    expit(lq + epsilon)
                })
                .sum::<f64>()
                / rows.len() as f64;
            total += estimate * rows.len() as f64;
            folds.push(FoldTmle { size: rows.len(), epsilon, estimate, score });
        }
        TmleEstimate { estimate: total / n as f64, folds }
    }

    pub fn evaluate(&self, rule: &[u8]) -> f64 {
        self.evaluate_detailed(rule).estimate
    }
}

/// CV-TMLE estimate of `E[Y_d]` for the rule `d` given on every row.
pub fn tmle_mean_under_rule(cv: &CvNuisance, rule: &[u8]) -> Result<TmleEstimate> {
    if rule.len() != cv.n() {
        return Err(OdtrError::DimensionMismatch { expected: cv.n(), got: rule.len() });
    }
    Ok(TmleEvaluator::new(cv).evaluate_detailed(rule))
}
