//! Weight vectors on the probability simplex and simplex-constrained least
//! squares.
//!
//! The least-squares solver runs exponentiated-gradient descent from the
//! uniform point and then polishes the iterate with a primal active-set
//! method on the KKT system, so vertex solutions are reached exactly rather
//! than approached at the sublinear rate of the multiplicative updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OdtrError, Result};

pub const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(OdtrError::OffSimplex("empty weight vector".into()));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(OdtrError::OffSimplex(format!("negative or non-finite entry in {alpha:?}")));
        }
        let s: f64 = alpha.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(OdtrError::OffSimplex(format!("entries sum to {s}")));
        }
        Ok(Self(alpha))
    }

    pub fn vertex(j: usize, len: usize) -> Self {
        let mut a = vec![0.0; len];
        a[j] = 1.0;
        Self(a)
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    /// Clamps negatives to zero and renormalizes. Used on optimizer output.
    pub(crate) fn normalized(mut alpha: Vec<f64>) -> Self {
        for a in alpha.iter_mut() {
            if !a.is_finite() || *a < 0.0 {
                *a = 0.0;
            }
        }
        let s: f64 = alpha.iter().sum();
        if s <= 0.0 {
            return Self::uniform(alpha.len());
        }
        alpha.iter_mut().for_each(|a| *a /= s);
        Self(alpha)
    }

    #[cfg(test)]
    pub(crate) fn unchecked(alpha: Vec<f64>) -> Self {
        Self(alpha)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_vertex(&self) -> bool {
        self.0.iter().all(|&a| a == 0.0 || a == 1.0)
    }

    /// Index of the largest weight (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &a) in self.0.iter().enumerate() {
            if a > self.0[best] {
                best = j;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgStop {
    /// Stop once no weight moves by more than this amount in one step.
    WeightChange(f64),
    /// Stop once the objective improves by less than this amount.
    RiskImprovement(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgParams {
    pub iterations: usize,
    pub step: f64,
    pub stop: EgStop,
}

impl EgParams {
    /// Settings for stacking the outcome regression.
    pub const NUISANCE: EgParams = EgParams { iterations: 500, step: 0.1, stop: EgStop::WeightChange(1e-6) };
    /// Settings for the blip-combination metalearner under squared error.
    pub const BLIP_MSE: EgParams = EgParams { iterations: 2000, step: 0.05, stop: EgStop::RiskImprovement(1e-10) };
}

/// Quadratic `mean((y - Z α)^2)` in Gram form.
#[derive(Debug, Clone)]
pub struct SimplexQuadratic {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    y_sq: f64,
}

impl SimplexQuadratic {
    /// `columns[j]` holds candidate `j`'s predictions on every row.
    pub fn new(columns: &[Vec<f64>], y: &[f64]) -> Self {
        let j = columns.len();
        let m = y.len().max(1) as f64;
        let gram =
            DMatrix::from_fn(j, j, |a, b| columns[a].iter().zip(&columns[b]).map(|(x, z)| x * z).sum::<f64>() / m);
        let cross = DVector::from_fn(j, |a, _| columns[a].iter().zip(y).map(|(x, t)| x * t).sum::<f64>() / m);
        let y_sq = y.iter().map(|t| t * t).sum::<f64>() / m;
        Self { gram, cross, y_sq }
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    pub fn risk(&self, alpha: &[f64]) -> f64 {
        let a = DVector::from_column_slice(alpha);
        let quad = (a.transpose() * &self.gram * &a)[(0, 0)];
        (quad - 2.0 * self.cross.dot(&a) + self.y_sq).max(0.0)
    }

    fn gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        (&self.gram * alpha - &self.cross) * 2.0
    }

    /// Exponentiated-gradient descent from the uniform point.
    pub fn exponentiated_gradient(&self, params: EgParams) -> Vec<f64> {
        let j = self.dim();
        let mut alpha = DVector::from_element(j, 1.0 / j as f64);
        let mut risk = self.risk(alpha.as_slice());
        for _ in 0..params.iterations {
            let g = self.gradient(&alpha);
            let gmin = g.min();
            let mut next = DVector::from_fn(j, |k, _| alpha[k] * (-params.step * (g[k] - gmin)).exp());
            let s = next.sum();
            next /= s;
            let next_risk = self.risk(next.as_slice());
            let done = match params.stop {
                EgStop::WeightChange(tol) => (&next - &alpha).amax() < tol,
                EgStop::RiskImprovement(tol) => risk - next_risk < tol,
            };
            alpha = next;
            risk = next_risk;
            if done {
                break;
            }
        }
        alpha.iter().copied().collect()
    }

    /// Primal active-set solve of the KKT conditions, started at the best
    /// vertex.
    pub fn active_set(&self) -> Vec<f64> {
        let j = self.dim();
        let scale = 1.0 + self.gram.diagonal().amax();
        let best_vertex = (0..j)
            .min_by(|&a, &b| {
                let ra = self.gram[(a, a)] - 2.0 * self.cross[a];
                let rb = self.gram[(b, b)] - 2.0 * self.cross[b];
                ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        let mut alpha = DVector::zeros(j);
        alpha[best_vertex] = 1.0;
        let mut passive = vec![false; j];
        passive[best_vertex] = true;

        for _ in 0..(20 * j + 20) {
            // Multiplier of the sum constraint from the passive set.
            let grad = &self.gram * &alpha - &self.cross;
            let idx: Vec<usize> = (0..j).filter(|&k| passive[k]).collect();
            let nu = idx.iter().map(|&k| grad[k]).sum::<f64>() / idx.len() as f64;
            let entering = (0..j)
                .filter(|&k| !passive[k])
                .map(|k| (k, grad[k] - nu))
                .filter(|&(_, m)| m < -1e-13 * scale)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            let Some((k, _)) = entering else { break };
            passive[k] = true;

            for _ in 0..(j + 1) {
                let idx: Vec<usize> = (0..j).filter(|&k| passive[k]).collect();
                let Some(x) = self.equality_solve(&idx, scale) else {
                    passive[k] = false;
                    break;
                };
                if x.iter().all(|&v| v > 0.0) {
                    alpha.fill(0.0);
                    for (pos, &k) in idx.iter().enumerate() {
                        alpha[k] = x[pos];
                    }
                    break;
                }
                // Move toward x until the first passive weight hits zero.
                let mut t = 1.0f64;
                for (pos, &k) in idx.iter().enumerate() {
                    if x[pos] <= 0.0 {
                        let denom = alpha[k] - x[pos];
                        if denom > 0.0 {
                            t = t.min(alpha[k] / denom);
                        }
                    }
                }
                for (pos, &k) in idx.iter().enumerate() {
                    alpha[k] += t * (x[pos] - alpha[k]);
                }
                for &k in &idx {
                    if alpha[k] <= 1e-15 {
                        alpha[k] = 0.0;
                        passive[k] = false;
                    }
                }
                if !passive.iter().any(|&p| p) {
                    break;
                }
            }
        }
        alpha.iter().copied().collect()
    }

    fn equality_solve(&self, idx: &[usize], scale: f64) -> Option<Vec<f64>> {
        let m = idx.len();
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (a, &ka) in idx.iter().enumerate() {
            for (b, &kb) in idx.iter().enumerate() {
                kkt[(a, b)] = self.gram[(ka, kb)];
            }
            kkt[(a, a)] += 1e-12 * scale;
            kkt[(a, m)] = 1.0;
            kkt[(m, a)] = 1.0;
            rhs[a] = self.cross[ka];
        }
        rhs[m] = 1.0;
        let sol = kkt.lu().solve(&rhs)?;
        let x: Vec<f64> = sol.iter().take(m).copied().collect();
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Minimizes `mean((y - Z α)^2)` over the simplex. Returns the best of the
/// exponentiated-gradient iterate, its active-set polish, and every vertex.
pub fn simplex_least_squares(columns: &[Vec<f64>], y: &[f64], params: EgParams) -> WeightVector {
    let j = columns.len();
    if j == 1 {
        return WeightVector::vertex(0, 1);
    }
    let q = SimplexQuadratic::new(columns, y);
    let eg = WeightVector::normalized(q.exponentiated_gradient(params));
    let polished = WeightVector::normalized(q.active_set());
    let mut best = polished;
    let mut best_risk = q.risk(best.as_slice());
    let mut consider = |cand: WeightVector| {
        let r = q.risk(cand.as_slice());
        if r < best_risk {
            best_risk = r;
            best = cand;
        }
    };
    consider(eg);
    for k in 0..j {
        consider(WeightVector::vertex(k, j));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rejects_off_simplex() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![0.25, 0.75]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn single_column_is_forced() {
        let w = simplex_least_squares(&[vec![1.0, 2.0]], &[0.0, 0.0], EgParams::BLIP_MSE);
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn exact_column_wins_vertex() {
        // Candidate 1 reproduces the target exactly; candidate 2 is zero.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..200).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w = simplex_least_squares(&[y.clone(), vec![0.0; 200]], &y, EgParams::BLIP_MSE);
        assert!((w.as_slice()[0] - 1.0).abs() < 1e-4, "{w:?}");
    }

    #[test]
    fn interior_solution_matches_closed_form() {
        // Two orthogonal unit columns and target (0.3, 0.7): optimum (0.3, 0.7).
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let w = simplex_least_squares(&cols, &[0.3, 0.7], EgParams::BLIP_MSE);
        assert!((w.as_slice()[0] - 0.3).abs() < 1e-9);
        assert!((w.as_slice()[1] - 0.7).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn beats_random_simplex_points(seed in any::<u64>(), j in 2usize..6) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = 50;
            let cols: Vec<Vec<f64>> = (0..j).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = simplex_least_squares(&cols, &y, EgParams::BLIP_MSE);
            let q = SimplexQuadratic::new(&cols, &y);
            let r = q.risk(w.as_slice());
            prop_assert!(WeightVector::new(w.as_slice().to_vec()).is_ok());
            for _ in 0..200 {
                let raw: Vec<f64> = (0..j).map(|_| -rng.gen::<f64>().ln()).collect();
                let s: f64 = raw.iter().sum();
                let a: Vec<f64> = raw.iter().map(|v| v / s).collect();
                prop_assert!(r <= q.risk(&a) + 1e-8);
            }
        }
    }
}
