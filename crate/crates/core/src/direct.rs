//! Direct rule learners: outcome-weighted learning with a logistic surrogate
//! and the static treat-all / treat-none rules.
//!
//! OWL minimizes
//! `(1/n) Σ (Y_i / g(A_i|W_i)) log(1 + exp(-Ã_i f(W_i))) + λ ‖β‖²`
//! over linear `f(w) = b + βᵀw̃`, where `Ã = 2A - 1` and `w̃` is `w`
//! standardized on the training rows. The rule treats iff `f(w) > 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TreatmentRule};
use crate::error::{OdtrError, Result};
use crate::folds::make_folds_from_stream;
use crate::nuisance::TreatmentMechanism;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlSpec {
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub steps: usize,
    pub step_size: f64,
    pub gradient_tol: f64,
}

impl Default for OwlSpec {
    fn default() -> Self {
        Self { lambda_grid: vec![0.001, 0.01, 0.1, 1.0], cv_folds: 5, steps: 1000, step_size: 0.05, gradient_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticRuleSpec {
    pub value: u8,
}

/// Logistic surrogate `Φ(t) = log(1 + exp(-t))`.
pub fn logistic_surrogate(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// Derivative of [`logistic_surrogate`].
fn logistic_surrogate_grad(t: f64) -> f64 {
    -crate::linalg::expit(-t)
}

/// A fitted linear decision function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlModel {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    pub intercept: f64,
    /// Coefficients on the standardized covariates.
    pub coefs: Vec<f64>,
    pub lambda: f64,
    /// Set when every weight was zero and the model falls back to treat-none.
    pub degenerate: bool,
}

impl OwlModel {
    pub fn decision(&self, w: &[f64]) -> f64 {
        self.intercept
            + self.coefs.iter().enumerate().map(|(j, c)| c * (w[j] - self.x_mean[j]) / self.x_scale[j]).sum::<f64>()
    }

    /// `sign(f) = -1` for `f ≤ 0`, so a zero decision assigns control.
    pub fn assign(&self, w: &[f64]) -> u8 {
        u8::from(self.decision(w) > 0.0)
    }

    pub fn predict(&self, w: &DMatrix<f64>) -> TreatmentRule {
        let mut row = vec![0.0; w.ncols()];
        let a = (0..w.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = w[(i, j)];
                }
                self.assign(&row)
            })
            .collect();
        TreatmentRule::new(a).expect("binary assignments")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlFit {
    pub model: OwlModel,
    pub diagnostics: Vec<String>,
}

/// Standardized design with its centering and scaling.
struct Standardized {
    x: DMatrix<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize(w: &DMatrix<f64>) -> Standardized {
    let (n, p) = w.shape();
    let mut mean = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let col = w.column(j);
        let mu = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
        mean[j] = mu;
        if var > 1e-24 {
            scale[j] = var.sqrt();
        }
    }
    let x = DMatrix::from_fn(n, p, |i, j| (w[(i, j)] - mean[j]) / scale[j]);
    Standardized { x, mean, scale }
}

/// Penalized surrogate objective at `(b, β)` on standardized rows.
pub fn owl_objective(x: &DMatrix<f64>, sign: &[f64], weight: &[f64], lambda: f64, b: f64, beta: &[f64]) -> f64 {
    let n = x.nrows();
    let loss: f64 = (0..n)
        .map(|i| {
            let f = b + (0..beta.len()).map(|j| beta[j] * x[(i, j)]).sum::<f64>();
            weight[i] * logistic_surrogate(sign[i] * f)
        })
        .sum::<f64>()
        / n as f64;
    loss + lambda * beta.iter().map(|v| v * v).sum::<f64>()
}

/// Full-batch gradient descent from `f ≡ 0`. Rows with zero weight do not
/// contribute to the loss and are skipped.
fn descend(x: &DMatrix<f64>, sign: &[f64], weight: &[f64], lambda: f64, spec: &OwlSpec) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let active: Vec<usize> = (0..n).filter(|&i| weight[i] != 0.0).collect();
    let rows: Vec<f64> = active.iter().flat_map(|&i| (0..p).map(move |j| x[(i, j)])).collect();
    let scale: Vec<f64> = active.iter().map(|&i| weight[i] * sign[i] / n as f64).collect();
    let sgn: Vec<f64> = active.iter().map(|&i| sign[i]).collect();
    let mut b = 0.0;
    let mut beta = vec![0.0; p];
    let mut g_beta = vec![0.0; p];
    for _ in 0..spec.steps {
        let mut g_b = 0.0;
        g_beta.iter_mut().for_each(|g| *g = 0.0);
        for ((row, &c), &s) in rows.chunks_exact(p.max(1)).zip(&scale).zip(&sgn) {
            let f = b + row.iter().zip(&beta).map(|(v, w)| v * w).sum::<f64>();
            let r = c * logistic_surrogate_grad(s * f);
            g_b += r;
            for (g, v) in g_beta.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        for j in 0..p {
            g_beta[j] += 2.0 * lambda * beta[j];
        }
        let norm = (g_b * g_b + g_beta.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if norm < spec.gradient_tol {
            break;
        }
        b -= spec.step_size * g_b;
        for j in 0..p {
            beta[j] -= spec.step_size * g_beta[j];
        }
    }
    (b, beta)
}

/// IPTW weights `Y / g(A|W)` rescaled to mean one. The rescaling multiplies
/// the loss by a constant, so doubling `Y` leaves the fit unchanged.
fn normalized_weights(data: &Dataset, g: &TreatmentMechanism) -> Option<Vec<f64>> {
    let g_obs = g.prob_observed(data);
    let raw: Vec<f64> = data.y().iter().zip(&g_obs).map(|(y, g)| y / g).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    (mean > 0.0).then(|| raw.iter().map(|w| w / mean).collect())
}

fn treat_none_model(p: usize) -> OwlModel {
    OwlModel {
        x_mean: vec![0.0; p],
        x_scale: vec![1.0; p],
        intercept: 0.0,
        coefs: vec![0.0; p],
        lambda: 0.0,
        degenerate: true,
    }
}

/// Fits OWL with `λ` chosen from the grid by cross-validated weighted
/// surrogate loss. `seed` keys the CV folds.
pub fn fit_owl(spec: &OwlSpec, data: &Dataset, g: &TreatmentMechanism, seed: u64) -> Result<OwlFit> {
    if spec.lambda_grid.is_empty() || spec.lambda_grid.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(OdtrError::LearnerFailed { name: "owl".into(), reason: "penalty grid must be nonnegative".into() });
    }
    let Some(weight) = normalized_weights(data, g) else {
        return Ok(OwlFit {
            model: treat_none_model(data.p()),
            diagnostics: vec!["owl: every outcome weight is zero; returning treat-none".into()],
        });
    };
    let sign: Vec<f64> = data.a().iter().map(|&a| if a == 1 { 1.0 } else { -1.0 }).collect();
    let std = standardize(data.w());
    let n = data.n();

    let lambda = if spec.lambda_grid.len() == 1 || n < 2 * spec.cv_folds.max(2) {
        spec.lambda_grid[0]
    } else {
        let folds = make_folds_from_stream(n, spec.cv_folds.max(2), seed, rng::OWL_FOLDS, &[])?;
        let mut best = (f64::INFINITY, spec.lambda_grid[0]);
        for &lambda in &spec.lambda_grid {
            let mut total = 0.0;
            for k in 0..folds.v() {
                let train = folds.training_rows(k);
                let valid = folds.validation_rows(k);
                let xt = std.x.select_rows(&train);
                let st: Vec<f64> = train.iter().map(|&i| sign[i]).collect();
                let wt: Vec<f64> = train.iter().map(|&i| weight[i]).collect();
                let (b, beta) = descend(&xt, &st, &wt, lambda, spec);
                let xv = std.x.select_rows(&valid);
                let sv: Vec<f64> = valid.iter().map(|&i| sign[i]).collect();
                let wv: Vec<f64> = valid.iter().map(|&i| weight[i]).collect();
                total += owl_objective(&xv, &sv, &wv, 0.0, b, &beta) * valid.len() as f64;
            }
            let cv = total / n as f64;
            if cv < best.0 {
                best = (cv, lambda);
            }
        }
        best.1
    };
    let (intercept, coefs) = descend(&std.x, &sign, &weight, lambda, spec);
    Ok(OwlFit {
        model: OwlModel { x_mean: std.mean, x_scale: std.scale, intercept, coefs, lambda, degenerate: false },
        diagnostics: Vec::new(),
    })
}

pub fn static_rule(spec: StaticRuleSpec, data: &Dataset) -> TreatmentRule {
    TreatmentRule::constant(spec.value, data.n())
}

/// Empirical IPTW misclassification risk `(1/n) Σ Y_i / g(A_i|W_i) · I[A_i ≠ d_i]`.
pub fn iptw_misclassification_risk(data: &Dataset, g: &TreatmentMechanism, rule: &[u8]) -> f64 {
    let g_obs = g.prob_observed(data);
    (0..data.n()).filter(|&i| data.a()[i] != rule[i]).map(|i| data.y()[i] / g_obs[i]).sum::<f64>() / data.n() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn randomized(n: usize, seed: u64, outcome: impl Fn(u8, &[f64]) -> f64) -> Dataset {
        let mut rng = crate::rng::stream(seed, "owl-test", &[]);
        let w = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = (0..n).map(|i| outcome(a[i], &[w[(i, 0)], w[(i, 1)]])).collect();
        Dataset::from_parts(w, a, y).unwrap()
    }

    /// Exhaustive minimum of the IPTW misclassification risk over static rules.
    fn best_static(data: &Dataset, g: &TreatmentMechanism) -> u8 {
        let r0 = iptw_misclassification_risk(data, g, &vec![0; data.n()]);
        let r1 = iptw_misclassification_risk(data, g, &vec![1; data.n()]);
        u8::from(r1 < r0)
    }

    #[test]
    fn treats_everyone_when_treatment_always_succeeds() {
        let data = randomized(100, 1, |a, _| f64::from(a));
        let g = TreatmentMechanism::constant(0.5);
        assert_eq!(best_static(&data, &g), 1);
        let fit = fit_owl(&OwlSpec::default(), &data, &g, 0).unwrap();
        assert!(fit.model.predict(data.w()).assignments().iter().all(|&d| d == 1));
    }

    #[test]
    fn treats_no_one_when_control_always_succeeds() {
        let data = randomized(100, 2, |a, _| f64::from(1 - a));
        let g = TreatmentMechanism::constant(0.5);
        assert_eq!(best_static(&data, &g), 0);
        let fit = fit_owl(&OwlSpec::default(), &data, &g, 0).unwrap();
        assert!(fit.model.predict(data.w()).assignments().iter().all(|&d| d == 0));
    }

    #[test]
    fn zero_outcomes_fall_back_to_treat_none() {
        let data = randomized(30, 3, |_, _| 0.0);
        let fit = fit_owl(&OwlSpec::default(), &data, &TreatmentMechanism::constant(0.5), 0).unwrap();
        assert!(fit.model.degenerate);
        assert_eq!(fit.diagnostics.len(), 1);
        assert!(fit.model.predict(data.w()).assignments().iter().all(|&d| d == 0));
    }

    #[test]
    fn objective_does_not_exceed_zero_function() {
        for seed in 0..5 {
            let data = randomized(80, 10 + seed, |a, w| if (w[0] > 0.0) == (a == 1) { 0.9 } else { 0.2 });
            let g = TreatmentMechanism::constant(0.5);
            let fit = fit_owl(&OwlSpec::default(), &data, &g, seed).unwrap();
            let std = standardize(data.w());
            let sign: Vec<f64> = data.a().iter().map(|&a| if a == 1 { 1.0 } else { -1.0 }).collect();
            let weight = normalized_weights(&data, &g).unwrap();
            let at_fit = owl_objective(&std.x, &sign, &weight, fit.model.lambda, fit.model.intercept, &fit.model.coefs);
            let at_zero = owl_objective(&std.x, &sign, &weight, fit.model.lambda, 0.0, &[0.0, 0.0]);
            assert!(at_fit <= at_zero);
        }
    }

    #[test]
    fn doubling_outcome_scales_loss_and_keeps_rule() {
        let data = randomized(120, 4, |a, w| if (w[0] + 0.3 * w[1] > 0.1) == (a == 1) { 0.45 } else { 0.1 });
        let doubled = data.with_outcome(data.y().iter().map(|y| 2.0 * y).collect()).unwrap();
        let g = TreatmentMechanism::constant(0.5);
        let std = standardize(data.w());
        let sign: Vec<f64> = data.a().iter().map(|&a| if a == 1 { 1.0 } else { -1.0 }).collect();
        let raw = |d: &Dataset| -> Vec<f64> { d.y().iter().map(|y| y / 0.5).collect() };
        for (b, beta) in [(0.0, [0.0, 0.0]), (0.3, [1.0, -0.5]), (-1.2, [0.2, 2.0])] {
            let l1 = owl_objective(&std.x, &sign, &raw(&data), 0.0, b, &beta);
            let l2 = owl_objective(&std.x, &sign, &raw(&doubled), 0.0, b, &beta);
            assert!((l2 - 2.0 * l1).abs() < 1e-12);
        }
        let r1 = fit_owl(&OwlSpec::default(), &data, &g, 7).unwrap().model.predict(data.w());
        let r2 = fit_owl(&OwlSpec::default(), &doubled, &g, 7).unwrap().model.predict(data.w());
        assert_eq!(r1, r2);
    }

    #[test]
    fn beats_static_rules_on_separable_data() {
        let data = randomized(200, 5, |a, w| f64::from((w[0] > 0.0) == (a == 1)));
        let g = TreatmentMechanism::constant(0.5);
        let rule = fit_owl(&OwlSpec::default(), &data, &g, 1).unwrap().model.predict(data.w());
        let r = iptw_misclassification_risk(&data, &g, rule.assignments());
        assert!(r <= iptw_misclassification_risk(&data, &g, &[0; 200]));
        assert!(r <= iptw_misclassification_risk(&data, &g, &[1; 200]));
    }

    #[test]
    fn static_rules_are_constant() {
        let data = randomized(5, 6, |_, _| 0.5);
        assert_eq!(static_rule(StaticRuleSpec { value: 1 }, &data).assignments(), &[1, 1, 1, 1, 1]);
        assert_eq!(static_rule(StaticRuleSpec { value: 0 }, &data).assignments(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn surrogate_is_stable() {
        assert!((logistic_surrogate(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(logistic_surrogate(800.0) >= 0.0);
        assert!((logistic_surrogate(-800.0) - 800.0).abs() < 1e-9);
    }
}
