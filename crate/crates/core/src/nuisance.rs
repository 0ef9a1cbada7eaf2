//! Outcome regression `Q(a, w)`, treatment mechanism `g(a | w)`, and the
//! doubly-robust pseudo-outcome
//! `D = (2A - 1) / g(A|W) * (Y - Q(A, W)) + Q(1, W) - Q(0, W)`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OdtrError, Result};
use crate::folds::FoldAssignment;
use crate::linalg::{expit, logistic_irls, Design};
use crate::simplex::{simplex_least_squares, EgParams, WeightVector};
use crate::tree::{RegressionTree, TreeParams};

/// Propensity truncation level.
pub const PROPENSITY_TRUNCATION: f64 = 0.01;

const IRLS_MAX_ITER: usize = 25;
const IRLS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeLearnerKind {
    Mean,
    MainTermsGlm,
    PairwiseGlm,
    Tree,
}

impl OutcomeLearnerKind {
    pub const STACK: [OutcomeLearnerKind; 4] = [
        OutcomeLearnerKind::Mean,
        OutcomeLearnerKind::MainTermsGlm,
        OutcomeLearnerKind::PairwiseGlm,
        OutcomeLearnerKind::Tree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeLearnerKind::Mean => "Q.mean",
            OutcomeLearnerKind::MainTermsGlm => "Q.glm",
            OutcomeLearnerKind::PairwiseGlm => "Q.glm.interaction",
            OutcomeLearnerKind::Tree => "Q.tree",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedOutcomeLearner {
    Mean(f64),
    Logistic { design: Design, coefs: Vec<f64> },
    Tree(RegressionTree),
}

impl FittedOutcomeLearner {
    fn fit(kind: OutcomeLearnerKind, x: &DMatrix<f64>, y: &[f64]) -> Option<Self> {
        match kind {
            OutcomeLearnerKind::Mean => Some(Self::Mean(y.iter().sum::<f64>() / y.len() as f64)),
            OutcomeLearnerKind::MainTermsGlm | OutcomeLearnerKind::PairwiseGlm => {
                let design =
                    if kind == OutcomeLearnerKind::MainTermsGlm { Design::MainTerms } else { Design::Pairwise };
                let coefs = logistic_irls(&design.matrix(x), y, IRLS_MAX_ITER, IRLS_TOL)?;
                Some(Self::Logistic { design, coefs })
            }
            OutcomeLearnerKind::Tree => Some(Self::Tree(RegressionTree::fit(x, y, TreeParams::default()))),
        }
    }

    fn predict_row(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        match self {
            Self::Mean(m) => *m,
            Self::Logistic { design, coefs } => {
                design.expand_into(x, buf);
                expit(crate::linalg::dot(buf, coefs))
            }
            Self::Tree(t) => t.predict_row(x),
        }
    }
}

/// Features `(a, w_1, ..., w_p)` for every row with treatment overridden by
/// `a` when given.
fn treatment_features(data: &Dataset, a: Option<u8>) -> DMatrix<f64> {
    let (n, p) = (data.n(), data.p());
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { f64::from(a.unwrap_or(data.a()[i])) } else { data.w()[(i, j - 1)] })
}

/// Stacked regression of `Y` on `(A, W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRegression {
    kinds: Vec<OutcomeLearnerKind>,
    learners: Vec<FittedOutcomeLearner>,
    weights: WeightVector,
    /// Learners dropped because a fit failed.
    pub dropped: Vec<String>,
}

impl OutcomeRegression {
    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn kinds(&self) -> &[OutcomeLearnerKind] {
        &self.kinds
    }

    /// Prediction at treatment `a` and covariate row `w`, in `[0, 1]`.
    pub fn predict(&self, a: u8, w: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(w.len() + 1);
        x.push(f64::from(a));
        x.extend_from_slice(w);
        let mut buf = Vec::new();
        self.predict_features(&x, &mut buf)
    }

    fn predict_features(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        let s: f64 = self
            .learners
            .iter()
            .zip(self.weights.as_slice())
            .filter(|(_, &a)| a > 0.0)
            .map(|(l, &a)| a * l.predict_row(x, buf))
            .sum();
        s.clamp(0.0, 1.0)
    }

    /// Predictions for every row of `w` at a fixed treatment `a`.
    pub fn predict_at(&self, a: u8, w: &DMatrix<f64>) -> Vec<f64> {
        let p = w.ncols();
        let mut x = vec![0.0; p + 1];
        x[0] = f64::from(a);
        let mut buf = Vec::new();
        (0..w.nrows())
            .map(|i| {
                for j in 0..p {
                    x[j + 1] = w[(i, j)];
                }
                self.predict_features(&x, &mut buf)
            })
            .collect()
    }

    /// Predictions at the observed treatment of each row.
    pub fn predict_observed(&self, data: &Dataset) -> Vec<f64> {
        let x = treatment_features(data, None);
        let mut row = vec![0.0; x.ncols()];
        let mut buf = Vec::new();
        (0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.predict_features(&row, &mut buf)
            })
            .collect()
    }
}

/// Stacks mean, main-terms logistic GLM, pairwise-interaction logistic GLM,
/// and a regression tree with simplex weights minimizing cross-validated
/// squared error over `folds`. Only the rows of `data` are used.
pub fn fit_outcome_regression(data: &Dataset, folds: &FoldAssignment) -> Result<OutcomeRegression> {
    if folds.n() != data.n() {
        return Err(OdtrError::DimensionMismatch { expected: data.n(), got: folds.n() });
    }
    let x = treatment_features(data, None);
    let y = data.y();
    let mut kinds = Vec::new();
    let mut cv_columns = Vec::new();
    let mut dropped = Vec::new();
    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> =
        (0..folds.v()).map(|k| (folds.training_rows(k), folds.validation_rows(k))).collect();

    'kinds: for kind in OutcomeLearnerKind::STACK {
        let mut column = vec![0.0; data.n()];
        let mut buf = Vec::new();
        for (train, valid) in &fold_rows {
            let xt = x.select_rows(train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let Some(fitted) = FittedOutcomeLearner::fit(kind, &xt, &yt) else {
                warn!("outcome learner {} failed on a training fold; dropping it", kind.name());
                dropped.push(kind.name().to_string());
                continue 'kinds;
            };
            let mut row = vec![0.0; x.ncols()];
            for &i in valid {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                column[i] = fitted.predict_row(&row, &mut buf);
            }
        }
        if column.iter().any(|v| !v.is_finite()) {
            warn!("outcome learner {} produced non-finite predictions; dropping it", kind.name());
            dropped.push(kind.name().to_string());
            continue;
        }
        kinds.push(kind);
        cv_columns.push(column);
    }

    let mut learners = Vec::new();
    let mut kept_kinds = Vec::new();
    let mut kept_columns = Vec::new();
    for (kind, column) in kinds.into_iter().zip(cv_columns) {
        match FittedOutcomeLearner::fit(kind, &x, y) {
            Some(l) => {
                learners.push(l);
                kept_kinds.push(kind);
                kept_columns.push(column);
            }
            None => {
                warn!("outcome learner {} failed on the full sample; dropping it", kind.name());
                dropped.push(kind.name().to_string());
            }
        }
    }
    if learners.is_empty() {
        return Err(OdtrError::LearnerFailed {
            name: "outcome regression".into(),
            reason: "every stacked learner failed".into(),
        });
    }
    let weights = simplex_least_squares(&kept_columns, y, EgParams::NUISANCE);
    Ok(OutcomeRegression { kinds: kept_kinds, learners, weights, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PropensityModel {
    Constant(f64),
    Logistic { coefs: Vec<f64> },
}

/// `P(A = 1 | W)` truncated to `[δ, 1 − δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentMechanism {
    model: PropensityModel,
    truncation: f64,
}

impl TreatmentMechanism {
    /// A known randomization probability.
    pub fn constant(p_treat: f64) -> Self {
        Self { model: PropensityModel::Constant(p_treat), truncation: PROPENSITY_TRUNCATION }
    }

    pub fn prob_treated(&self, w: &[f64]) -> f64 {
        let raw = match &self.model {
            PropensityModel::Constant(p) => *p,
            PropensityModel::Logistic { coefs } => {
                let mut buf = Vec::new();
                Design::MainTerms.expand_into(w, &mut buf);
                expit(crate::linalg::dot(&buf, coefs))
            }
        };
        raw.clamp(self.truncation, 1.0 - self.truncation)
    }

    /// `g(a | w)`.
    pub fn prob(&self, a: u8, w: &[f64]) -> f64 {
        let p1 = self.prob_treated(w);
        if a == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    /// `g(A_i | W_i)` for every row.
    pub fn prob_observed(&self, data: &Dataset) -> Vec<f64> {
        if let PropensityModel::Constant(_) = self.model {
            let p1 = self.prob_treated(&[]);
            return data.a().iter().map(|&a| if a == 1 { p1 } else { 1.0 - p1 }).collect();
        }
        (0..data.n()).map(|i| self.prob(data.a()[i], &data.row(i))).collect()
    }
}

fn check_both_arms(data: &Dataset) -> Result<()> {
    let treated = data.treated_count();
    if treated == 0 || treated == data.n() {
        return Err(OdtrError::PositivityViolation(format!(
            "only one treatment arm observed ({treated} of {} treated)",
            data.n()
        )));
    }
    Ok(())
}

/// Intercept-only logistic fit: the empirical treated fraction.
pub fn fit_treatment_mechanism(data: &Dataset) -> Result<TreatmentMechanism> {
    check_both_arms(data)?;
    let p = data.treated_count() as f64 / data.n() as f64;
    Ok(TreatmentMechanism::constant(p))
}

/// Main-terms logistic regression of `A` on `W`, for observational data.
pub fn fit_treatment_mechanism_glm(data: &Dataset) -> Result<TreatmentMechanism> {
    check_both_arms(data)?;
    let a: Vec<f64> = data.a().iter().map(|&v| f64::from(v)).collect();
    let coefs = logistic_irls(&Design::MainTerms.matrix(data.w()), &a, IRLS_MAX_ITER, IRLS_TOL).ok_or_else(|| {
        OdtrError::LearnerFailed {
            name: "g.glm".into(),
            reason: "logistic fit did not produce finite coefficients".into(),
        }
    })?;
    Ok(TreatmentMechanism { model: PropensityModel::Logistic { coefs }, truncation: PROPENSITY_TRUNCATION })
}

/// Nuisance predictions on a set of rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NuisancePredictions {
    /// `Q(A_i, W_i)`
    pub q_observed: Vec<f64>,
    /// `Q(1, W_i)`
    pub q1: Vec<f64>,
    /// `Q(0, W_i)`
    pub q0: Vec<f64>,
    /// `g(A_i | W_i)`
    pub g_observed: Vec<f64>,
}

impl NuisancePredictions {
    pub fn compute(data: &Dataset, q: &OutcomeRegression, g: &TreatmentMechanism) -> Self {
        let q1 = q.predict_at(1, data.w());
        let q0 = q.predict_at(0, data.w());
        let q_observed = data.a().iter().enumerate().map(|(i, &a)| if a == 1 { q1[i] } else { q0[i] }).collect();
        Self { q_observed, q1, q0, g_observed: g.prob_observed(data) }
    }

    pub fn pseudo_outcome(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n())
            .map(|i| {
                pseudo_outcome_value(
                    data.a()[i],
                    data.y()[i],
                    self.g_observed[i],
                    self.q_observed[i],
                    self.q1[i],
                    self.q0[i],
                )
            })
            .collect()
    }
}

pub fn pseudo_outcome_value(a: u8, y: f64, g_a: f64, q_a: f64, q1: f64, q0: f64) -> f64 {
    let sign = if a == 1 { 1.0 } else { -1.0 };
    sign / g_a * (y - q_a) + q1 - q0
}

/// Doubly-robust pseudo-outcome for every row of `data`.
pub fn pseudo_outcome(data: &Dataset, q: &OutcomeRegression, g: &TreatmentMechanism) -> Vec<f64> {
    NuisancePredictions::compute(data, q, g).pseudo_outcome(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::make_folds;
    use rand::Rng;

    fn random_w(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream(seed, "test-w", &[]);
        DMatrix::from_fn(n, p, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn constant_outcome_is_predicted_exactly() {
        let n = 200;
        let w = random_w(n, 3, 1);
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let data = Dataset::from_parts(w, a, vec![0.3; n]).unwrap();
        let q = fit_outcome_regression(&data, &make_folds(n, 5, 2).unwrap()).unwrap();
        for i in 0..n {
            for a in [0, 1] {
                assert!((q.predict(a, &data.row(i)) - 0.3).abs() < 1e-6);
            }
        }
        let s: f64 = q.weights().as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_y_equals_a_is_learned() {
        // Oracle: Q(a, w) = a exactly.
        let n = 1000;
        let w = random_w(n, 4, 3);
        let mut rng = crate::rng::stream(4, "test-a", &[]);
        let a: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let y: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
        let data = Dataset::from_parts(w, a, y).unwrap();
        let q = fit_outcome_regression(&data, &make_folds(n, 10, 5).unwrap()).unwrap();
        for i in 0..n {
            let row = data.row(i);
            assert!(q.predict(1, &row) > 0.95);
            assert!(q.predict(0, &row) < 0.05);
        }
    }

    #[test]
    fn intercept_only_propensity() {
        let n = 1000;
        let w = random_w(n, 2, 6);
        let a: Vec<u8> = (0..n).map(|i| u8::from(i < 500)).collect();
        let data = Dataset::from_parts(w.clone(), a, vec![0.5; n]).unwrap();
        let g = fit_treatment_mechanism(&data).unwrap();
        assert_eq!(g.prob_treated(&[0.0, 0.0]), 0.5);

        let n = 441;
        let a: Vec<u8> = (0..n).map(|i| u8::from(i < 231)).collect();
        let data = Dataset::from_parts(random_w(n, 2, 7), a, vec![0.5; n]).unwrap();
        let g = fit_treatment_mechanism(&data).unwrap();
        assert!((g.prob_treated(&[1.0, -1.0]) - 231.0 / 441.0).abs() < 1e-15);
        assert!((g.prob_treated(&[0.0, 0.0]) - 0.5238).abs() < 1e-4);
    }

    #[test]
    fn single_arm_is_a_positivity_violation() {
        let data = Dataset::from_parts(random_w(10, 1, 8), vec![1; 10], vec![0.5; 10]).unwrap();
        assert!(matches!(fit_treatment_mechanism(&data), Err(OdtrError::PositivityViolation(_))));
        assert!(matches!(fit_treatment_mechanism_glm(&data), Err(OdtrError::PositivityViolation(_))));
    }

    #[test]
    fn propensity_is_truncated() {
        let g = TreatmentMechanism::constant(0.999);
        assert_eq!(g.prob_treated(&[]), 0.99);
        assert!((g.prob(0, &[]) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn covariate_propensity_model_tracks_dependence() {
        let n = 2000;
        let w = random_w(n, 1, 9);
        let mut rng = crate::rng::stream(10, "test-a", &[]);
        let a: Vec<u8> = (0..n).map(|i| u8::from(rng.gen_bool(expit(1.5 * w[(i, 0)])))).collect();
        let data = Dataset::from_parts(w, a, vec![0.5; n]).unwrap();
        let g = fit_treatment_mechanism_glm(&data).unwrap();
        assert!(g.prob_treated(&[1.5]) > 0.8);
        assert!(g.prob_treated(&[-1.5]) < 0.2);
    }

    #[test]
    fn pseudo_outcome_formula() {
        assert!((pseudo_outcome_value(1, 1.0, 0.5, 0.6, 0.6, 0.4) - 1.0).abs() < 1e-15);
        // Residual term vanishes when Y = Q(A, W).
        assert!((pseudo_outcome_value(0, 0.3, 0.25, 0.3, 0.9, 0.3) - 0.6).abs() < 1e-15);
        assert!((pseudo_outcome_value(1, 0.7, 0.1, 0.7, 0.7, 0.2) - 0.5).abs() < 1e-15);
    }
}
