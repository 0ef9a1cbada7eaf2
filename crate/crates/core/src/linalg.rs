//! Feature designs and the two regression solvers shared by the learners:
//! ridge-jittered least squares and logistic regression by IRLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Diagonal jitter added to every normal-equation system.
pub const RIDGE_JITTER: f64 = 1e-8;

/// Column expansion of a covariate row. Every design carries an intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Design {
    Intercept,
    /// Intercept plus covariate `j`.
    Univariate(usize),
    /// Intercept plus every covariate.
    MainTerms,
    /// Main terms plus every pairwise product `x_i x_j`, `i < j`.
    Pairwise,
}

impl Design {
    pub fn width(self, p: usize) -> usize {
        match self {
            Design::Intercept => 1,
            Design::Univariate(_) => 2,
            Design::MainTerms => 1 + p,
            Design::Pairwise => 1 + p + p * (p.saturating_sub(1)) / 2,
        }
    }

    pub fn expand_into(self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        match self {
            Design::Intercept => {}
            Design::Univariate(j) => out.push(x[j]),
            Design::MainTerms => out.extend_from_slice(x),
            Design::Pairwise => {
                out.extend_from_slice(x);
                for i in 0..x.len() {
                    for j in (i + 1)..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
            }
        }
    }

    /// Design matrix for the rows of `x`.
    pub fn matrix(self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.width(x.ncols());
        let mut out = DMatrix::zeros(x.nrows(), k);
        let mut buf = Vec::with_capacity(k);
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            self.expand_into(&row, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }
}

fn solve_spd(mut lhs: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += RIDGE_JITTER;
    }
    if let Some(ch) = lhs.clone().cholesky() {
        let sol = ch.solve(&rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Some(sol);
        }
    }
    // Rank-deficient beyond what the jitter absorbs: minimum-norm solution.
    let svd = lhs.svd(true, true);
    svd.solve(&rhs, 1e-12).ok().filter(|s| s.iter().all(|v| v.is_finite()))
}

/// Ordinary least squares of `y` on the columns of `x`.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Option<Vec<f64>> {
    let yv = DVector::from_column_slice(y);
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(&yv);
    solve_spd(xtx, xty).map(|b| b.iter().copied().collect())
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn bernoulli_deviance(eta: &DVector<f64>, y: &[f64]) -> f64 {
    // -2 log-likelihood with fractional outcomes allowed.
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            let log1p_exp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            2.0 * (log1p_exp - yi * e)
        })
        .sum()
}

/// Logistic regression of `y ∈ [0, 1]` on the columns of `x` by
/// Newton-Raphson (IRLS) with step halving. Fractional outcomes are treated
/// as quasi-binomial. Under separation the iteration stops at `max_iter`
/// with fitted probabilities near 0 or 1.
pub fn logistic_irls(x: &DMatrix<f64>, y: &[f64], max_iter: usize, tol: f64) -> Option<Vec<f64>> {
    let (n, k) = x.shape();
    let ybar = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(k);
    // Start from the intercept-only solution when column 0 is the intercept.
    if (0..n).all(|i| x[(i, 0)] == 1.0) {
        beta[0] = logit(ybar);
    }
    let mut eta = x * &beta;
    let mut dev = bernoulli_deviance(&eta, y);
    for _ in 0..max_iter {
        let mut grad = DVector::zeros(k);
        let mut wx = x.clone();
        for i in 0..n {
            let p = expit(eta[i]);
            let w = (p * (1.0 - p)).max(1e-12);
            let r = y[i] - p;
            for j in 0..k {
                grad[j] += x[(i, j)] * r;
                wx[(i, j)] *= w;
            }
        }
        let hess = x.tr_mul(&wx);
        let step = solve_spd(hess, grad)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_dev = bernoulli_deviance(&cand_eta, y);
            if cand_dev.is_finite() && cand_dev <= dev + 1e-12 {
                let change = dev - cand_dev;
                beta = cand;
                eta = cand_eta;
                dev = cand_dev;
                accepted = true;
                if change.abs() < tol * (dev.abs() + 0.1) {
                    return finite(beta);
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    finite(beta)
}

fn finite(beta: DVector<f64>) -> Option<Vec<f64>> {
    beta.iter().all(|v| v.is_finite()).then(|| beta.iter().copied().collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
