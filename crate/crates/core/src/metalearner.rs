//! Candidate combination, cross-validated risks, and the search for the
//! weight vector `α`.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::config::{Metalearner, RiskKind};
use crate::data::TreatmentRule;
use crate::error::{OdtrError, Result};
use crate::rng;
use crate::simplex::{simplex_least_squares, EgParams, SimplexQuadratic, WeightVector, SIMPLEX_TOL};
use crate::tmle::{CvNuisance, TmleEvaluator};

/// Dirichlet(1, ..., 1) draws in the derivative-free search.
pub const DIRICHLET_DRAWS: usize = 1000;
/// Coordinate-pair rounds after the random search.
pub const PAIR_ROUNDS: usize = 200;
/// Grid points on each coordinate-pair segment.
pub const PAIR_GRID: usize = 11;

/// Validation-row predictions of every candidate, each row predicted by the
/// fit that excluded its fold. `blip[j]` is present iff candidate `j` is
/// blip-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePredictions {
    pub names: Vec<String>,
    pub blip: Vec<Option<Vec<f64>>>,
    pub rule: Vec<Vec<u8>>,
}

impl CandidatePredictions {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn all_blip_based(&self) -> bool {
        self.blip.iter().all(Option::is_some)
    }

    fn blip_columns(&self) -> Result<Vec<&[f64]>> {
        self.blip
            .iter()
            .zip(&self.names)
            .map(|(b, name)| {
                b.as_deref().ok_or_else(|| OdtrError::LearnerFailed {
                    name: name.clone(),
                    reason: "candidate provides no blip estimate".into(),
                })
            })
            .collect()
    }
}

fn check_alpha(alpha: &WeightVector, j: usize) -> Result<()> {
    if alpha.len() != j {
        return Err(OdtrError::DimensionMismatch { expected: j, got: alpha.len() });
    }
    let s: f64 = alpha.as_slice().iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL || alpha.as_slice().iter().any(|&a| a < 0.0) {
        return Err(OdtrError::OffSimplex(format!("{:?}", alpha.as_slice())));
    }
    Ok(())
}

/// Rowwise `Σ_j α_j B_j`.
pub fn combine_blip(columns: &[&[f64]], alpha: &WeightVector) -> Result<Vec<f64>> {
    check_alpha(alpha, columns.len())?;
    let n = columns.first().map_or(0, |c| c.len());
    let mut out = vec![0.0; n];
    for (col, &a) in columns.iter().zip(alpha.as_slice()) {
        if a == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(col.iter()) {
            *o += a * b;
        }
    }
    Ok(out)
}

/// Rowwise weighted majority vote `I[Σ_j α_j d_j > 1/2]`.
pub fn combine_vote(rules: &[&[u8]], alpha: &WeightVector) -> Result<TreatmentRule> {
    check_alpha(alpha, rules.len())?;
    let n = rules.first().map_or(0, |c| c.len());
    let mut score = vec![0.0; n];
    for (col, &a) in rules.iter().zip(alpha.as_slice()) {
        for (s, &d) in score.iter_mut().zip(col.iter()) {
            if d == 1 {
                *s += a;
            }
        }
    }
    TreatmentRule::new(score.iter().map(|&s| u8::from(s > 0.5)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskValueKind {
    Mse,
    NegativeMeanOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskValue {
    pub value: f64,
    pub kind: RiskValueKind,
}

/// Mean squared difference between the blip and the pseudo-outcome.
pub fn risk_mse(blip: &[f64], pseudo: &[f64]) -> Result<RiskValue> {
    if blip.len() != pseudo.len() {
        return Err(OdtrError::DimensionMismatch { expected: pseudo.len(), got: blip.len() });
    }
    let value = blip.iter().zip(pseudo).map(|(b, d)| (d - b).powi(2)).sum::<f64>() / pseudo.len().max(1) as f64;
    Ok(RiskValue { value, kind: RiskValueKind::Mse })
}

/// Result of the weight search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedWeights {
    pub alpha: WeightVector,
    /// Cross-validated risk of `alpha`.
    pub cv_risk: f64,
    /// Cross-validated risk of every vertex, in candidate order.
    pub candidate_risks: Vec<f64>,
}

/// Scores a weight vector under one (metalearner, risk) pair.
struct Objective<'a> {
    preds: &'a CandidatePredictions,
    metalearner: Metalearner,
    risk: RiskKind,
    cv: &'a CvNuisance,
    tmle: Option<TmleEvaluator>,
}

impl Objective<'_> {
    fn rule_for(&self, alpha: &[f64]) -> Vec<u8> {
        let n = self.cv.n();
        match self.metalearner {
            Metalearner::BlipCombination => {
                let mut b = vec![0.0; n];
                for (col, &a) in self.preds.blip.iter().zip(alpha) {
                    if a == 0.0 {
                        continue;
                    }
                    let col = col.as_ref().expect("blip-only library");
                    for (o, &v) in b.iter_mut().zip(col) {
                        *o += a * v;
                    }
                }
                b.iter().map(|&v| u8::from(v > 0.0)).collect()
            }
            Metalearner::VoteCombination | Metalearner::Discrete => {
                let mut s = vec![0.0; n];
                for (col, &a) in self.preds.rule.iter().zip(alpha) {
                    if a == 0.0 {
                        continue;
                    }
                    for (o, &d) in s.iter_mut().zip(col) {
                        if d == 1 {
                            *o += a;
                        }
                    }
                }
                s.iter().map(|&v| u8::from(v > 0.5)).collect()
            }
        }
    }

    fn vertex_risk(&self, j: usize) -> f64 {
        match self.risk {
            RiskKind::Mse => {
                let b = self.preds.blip[j].as_ref().expect("blip-only library");
                risk_mse(b, &self.cv.pseudo).map(|r| r.value).unwrap_or(f64::INFINITY)
            }
            RiskKind::MeanOutcomeUnderRule => {
                -self.tmle.as_ref().expect("tmle evaluator").evaluate(&self.preds.rule[j])
            }
        }
    }

    fn risk(&self, alpha: &[f64]) -> f64 {
        match self.risk {
            RiskKind::Mse => {
                let cols: Vec<&[f64]> =
                    self.preds.blip.iter().map(|b| b.as_deref().expect("blip-only library")).collect();
                let alpha = WeightVector::normalized(alpha.to_vec());
                let b = combine_blip(&cols, &alpha).expect("normalized weights");
                risk_mse(&b, &self.cv.pseudo).map(|r| r.value).unwrap_or(f64::INFINITY)
            }
            RiskKind::MeanOutcomeUnderRule => {
                -self.tmle.as_ref().expect("tmle evaluator").evaluate(&self.rule_for(alpha))
            }
        }
    }
}

fn first_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = j;
        }
    }
    best
}

/// Chooses `α` minimizing the cross-validated risk.
///
/// * Discrete: the vertex with the lowest risk (lowest index on ties).
/// * Blip combination under MSE: simplex-constrained least squares.
/// * Otherwise: all vertices, the uniform point, and seeded Dirichlet draws,
///   followed by coordinate-pair line searches from the best point.
pub fn optimize_weights(
    preds: &CandidatePredictions,
    risk: RiskKind,
    metalearner: Metalearner,
    cv: &CvNuisance,
    seed: u64,
) -> Result<OptimizedWeights> {
    let j = preds.len();
    if j == 0 {
        return Err(OdtrError::NoViableCandidates);
    }
    if risk == RiskKind::Mse || metalearner == Metalearner::BlipCombination {
        preds.blip_columns()?;
    }
    for r in &preds.rule {
        if r.len() != cv.n() {
            return Err(OdtrError::DimensionMismatch { expected: cv.n(), got: r.len() });
        }
    }
    let tmle = (risk == RiskKind::MeanOutcomeUnderRule).then(|| TmleEvaluator::new(cv));
    let objective = Objective { preds, metalearner, risk, cv, tmle };
    let candidate_risks: Vec<f64> = (0..j).map(|k| objective.vertex_risk(k)).collect();
    let best_vertex = first_argmin(&candidate_risks);

    if j == 1 || metalearner == Metalearner::Discrete {
        return Ok(OptimizedWeights {
            alpha: WeightVector::vertex(best_vertex, j),
            cv_risk: candidate_risks[best_vertex],
            candidate_risks,
        });
    }

    if metalearner == Metalearner::BlipCombination && risk == RiskKind::Mse {
        let cols: Vec<Vec<f64>> = preds.blip_columns()?.into_iter().map(<[f64]>::to_vec).collect();
        let alpha = simplex_least_squares(&cols, &cv.pseudo, EgParams::BLIP_MSE);
        let quad = SimplexQuadratic::new(&cols, &cv.pseudo);
        let cv_risk = quad.risk(alpha.as_slice());
        // Guard the vertex-dominance guarantee against rounding in the Gram form.
        if candidate_risks[best_vertex] < objective.risk(alpha.as_slice()) {
            return Ok(OptimizedWeights {
                alpha: WeightVector::vertex(best_vertex, j),
                cv_risk: candidate_risks[best_vertex],
                candidate_risks,
            });
        }
        return Ok(OptimizedWeights { alpha, cv_risk, candidate_risks });
    }

    // Derivative-free search over the simplex.
    let mut best_alpha = WeightVector::vertex(best_vertex, j).as_slice().to_vec();
    let mut best_risk = candidate_risks[best_vertex];
    let mut consider = |alpha: Vec<f64>, r: f64| {
        if r < best_risk {
            best_risk = r;
            best_alpha = alpha;
        }
    };
    let uniform = WeightVector::uniform(j).as_slice().to_vec();
    let r = objective.risk(&uniform);
    consider(uniform, r);
    let mut stream = rng::stream(seed, rng::ALPHA_SEARCH, &[j as u64]);
    for _ in 0..DIRICHLET_DRAWS {
        let raw: Vec<f64> = (0..j).map(|_| Exp1.sample(&mut stream)).collect();
        let total: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v: &f64| v / total).collect();
        let r = objective.risk(&alpha);
        consider(alpha, r);
    }

    let pairs: Vec<(usize, usize)> = (0..j).flat_map(|a| ((a + 1)..j).map(move |b| (a, b))).collect();
    let mut since_improvement = 0;
    for round in 0..PAIR_ROUNDS {
        if since_improvement >= pairs.len() {
            break;
        }
        let (a, b) = pairs[round % pairs.len()];
        let mass = best_alpha[a] + best_alpha[b];
        let mut improved = false;
        if mass > 0.0 {
            for step in 0..PAIR_GRID {
                let t = step as f64 / (PAIR_GRID - 1) as f64;
                let mut cand = best_alpha.clone();
                cand[a] = mass * t;
                cand[b] = mass - cand[a];
                let r = objective.risk(&cand);
                if r < best_risk {
                    best_risk = r;
                    best_alpha = cand;
                    improved = true;
                }
            }
        }
        since_improvement = if improved { 0 } else { since_improvement + 1 };
    }
    Ok(OptimizedWeights { alpha: WeightVector::normalized(best_alpha), cv_risk: best_risk, candidate_risks })
}
