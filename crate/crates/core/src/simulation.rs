//! The two simulated data-generating processes, their analytic truths, rule
//! metrics, and the multi-replication experiment driver.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::union_candidates;
use crate::config::{validate_config, EnsembleConfig};
use crate::data::{Dataset, TreatmentRule};
use crate::error::{OdtrError, Result};
use crate::folds::make_folds;
use crate::linalg::{expit, logistic_irls};
use crate::rng::{self, StreamRng};
use crate::superlearner::CandidatePool;

/// Number of covariates in both processes.
pub const DGP_COVARIATES: usize = 4;
/// Draws behind the cached optimal values.
pub const TRUTH_DRAWS: usize = 1_000_000;
/// Smallest number of draws [`monte_carlo_truth`] accepts.
pub const MIN_TRUTH_DRAWS: usize = 100_000;
/// Default size of the fresh evaluation sample.
pub const EVAL_SAMPLE_SIZE: usize = 10_000;
/// Label of the parametric comparison model in experiment output.
pub const BASELINE_LABEL: &str = "glm.baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dgp {
    One,
    Two,
}

impl TryFrom<u8> for Dgp {
    type Error = OdtrError;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Dgp::One),
            2 => Ok(Dgp::Two),
            _ => Err(OdtrError::InvalidConfiguration(format!("dgp must be 1 or 2, got {id}"))),
        }
    }
}

impl From<Dgp> for u8 {
    fn from(d: Dgp) -> u8 {
        d.id()
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl Dgp {
    pub fn id(self) -> u8 {
        match self {
            Dgp::One => 1,
            Dgp::Two => 2,
        }
    }

    /// `P(Y = 1 | A = a, W = w)`.
    pub fn outcome_probability(self, a: u8, w: &[f64]) -> f64 {
        let a = f64::from(a);
        match self {
            Dgp::One => {
                let (w1, w2, w3) = (w[0], w[1], w[2]);
                0.5 * expit(1.0 - w1 * w1 + 3.0 * w2 + 5.0 * w3 * w3 * a - 4.45 * a)
                    + 0.5 * expit(-0.5 - w3 + 2.0 * w1 * w2 + 3.0 * w2.abs() * a - 1.5 * a)
            }
            Dgp::Two => expit(w[0] + 0.1 * a + w[0] * a),
        }
    }

    pub fn true_blip(self, w: &[f64]) -> f64 {
        self.outcome_probability(1, w) - self.outcome_probability(0, w)
    }

    /// `I[B(w) > 0]`. For the second process this is exactly `I[w1 > −0.1]`.
    pub fn optimal_assignment(self, w: &[f64]) -> u8 {
        match self {
            Dgp::One => u8::from(self.true_blip(w) > 0.0),
            Dgp::Two => u8::from(w[0] > -0.1),
        }
    }

    pub fn optimal_rule(self, w: &DMatrix<f64>) -> TreatmentRule {
        TreatmentRule::new(rows(w).map(|r| self.optimal_assignment(&r)).collect()).expect("binary")
    }
}

fn rows(w: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..w.nrows()).map(move |i| w.row(i).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: Dgp,
    pub n: usize,
    pub seed: u64,
}

/// Standard-normal covariates, row by row.
pub fn sample_covariates(n: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, DGP_COVARIATES);
    for i in 0..n {
        for j in 0..DGP_COVARIATES {
            w[(i, j)] = rng.sample(StandardNormal);
        }
    }
    w
}

/// Draws `n` rows from the `data` stream of `spec.seed`. Each row draws
/// `W1..W4`, then `A`, then `Y`.
pub fn dgp_sample(spec: DgpSpec) -> Result<Dataset> {
    sample_from(spec.dgp, spec.n, &mut rng::stream(spec.seed, rng::DATA, &[]))
}

fn sample_from(dgp: Dgp, n: usize, rng: &mut StreamRng) -> Result<Dataset> {
    if n == 0 {
        return Err(OdtrError::InvalidData("sample size must be at least 1".into()));
    }
    let mut w = DMatrix::zeros(n, DGP_COVARIATES);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row = [0.0; DGP_COVARIATES];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = rng.sample(StandardNormal);
            w[(i, j)] = *r;
        }
        let ai = u8::from(rng.gen::<f64>() < 0.5);
        let p = dgp.outcome_probability(ai, &row);
        a.push(ai);
        y.push(if rng.gen::<f64>() < p { 1.0 } else { 0.0 });
    }
    Dataset::from_parts(w, a, y)
}

/// Monte Carlo approximation of a rule's mean outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEstimate {
    /// Mean of `p(d(w), w)` over the draws.
    pub value: f64,
    pub fraction_treated: f64,
    /// Standard error of `value`.
    pub std_error: f64,
}

/// Averages the analytic `p(d(w), w)` over `draws` fresh covariate rows from
/// the `evaluation` stream of `seed`.
pub fn monte_carlo_truth<F>(dgp: Dgp, rule: F, draws: usize, seed: u64) -> Result<TruthEstimate>
where
    F: Fn(&[f64]) -> u8,
{
    if draws < MIN_TRUTH_DRAWS {
        return Err(OdtrError::InvalidConfiguration(format!(
            "truth approximation needs at least {MIN_TRUTH_DRAWS} draws, got {draws}"
        )));
    }
    let mut rng = rng::stream(seed, rng::EVALUATION, &[u64::MAX]);
    let mut row = [0.0; DGP_COVARIATES];
    let (mut sum, mut sum_sq, mut treated) = (0.0, 0.0, 0usize);
    for _ in 0..draws {
        for r in row.iter_mut() {
            *r = rng.sample(StandardNormal);
        }
        let d = rule(&row);
        treated += usize::from(d);
        let p = dgp.outcome_probability(d, &row);
        sum += p;
        sum_sq += p * p;
    }
    let m = draws as f64;
    let value = sum / m;
    let var = (sum_sq / m - value * value).max(0.0) * m / (m - 1.0);
    Ok(TruthEstimate { value, fraction_treated: treated as f64 / m, std_error: (var / m).sqrt() })
}

/// `E[Y_{d*}]` at [`TRUTH_DRAWS`] draws, computed once per process.
pub fn optimal_value(dgp: Dgp) -> f64 {
    static CACHE: [OnceLock<f64>; 2] = [OnceLock::new(), OnceLock::new()];
    *CACHE[usize::from(dgp.id() - 1)].get_or_init(|| {
        monte_carlo_truth(dgp, |w| dgp.optimal_assignment(w), TRUTH_DRAWS, 0).expect("enough draws").value
    })
}

/// Truth-based performance of one rule on one evaluation sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics {
    /// Fraction of rows where the rule agrees with the optimal rule.
    pub accuracy: f64,
    /// Mean of `p(d(w), w)` over the rows.
    pub value: f64,
    /// `value − E[Y_{d*}]`.
    pub regret_approx: f64,
    pub fraction_treated: f64,
}

/// Scores `rule` on the rows of `w` against the analytic truth of `dgp`.
pub fn evaluate_rule_metrics(dgp: Dgp, w: &DMatrix<f64>, rule: &[u8]) -> Result<RuleMetrics> {
    if rule.len() != w.nrows() {
        return Err(OdtrError::DimensionMismatch { expected: w.nrows(), got: rule.len() });
    }
    if w.ncols() != DGP_COVARIATES {
        return Err(OdtrError::DimensionMismatch { expected: DGP_COVARIATES, got: w.ncols() });
    }
    if rule.is_empty() {
        return Err(OdtrError::InvalidData("empty evaluation sample".into()));
    }
    let (mut agree, mut value) = (0usize, 0.0);
    for (r, &d) in rows(w).zip(rule) {
        agree += usize::from(d == dgp.optimal_assignment(&r));
        value += dgp.outcome_probability(d, &r);
    }
    let m = rule.len() as f64;
    let value = value / m;
    Ok(RuleMetrics {
        accuracy: agree as f64 / m,
        value,
        regret_approx: value - optimal_value(dgp),
        fraction_treated: rule.iter().map(|&d| usize::from(d)).sum::<usize>() as f64 / m,
    })
}

/// Logistic regression of `Y` on `1, W, A, A·W`; the rule treats where the
/// fitted treatment contrast on the logit scale is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmBaseline {
    /// Coefficients of `A` and `A·W1..A·Wp`.
    pub contrast: Vec<f64>,
}

impl GlmBaseline {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        let x = DMatrix::from_fn(n, 2 + 2 * p, |i, c| {
            let a = f64::from(data.a()[i]);
            match c {
                0 => 1.0,
                c if c <= p => data.w()[(i, c - 1)],
                c if c == p + 1 => a,
                c => a * data.w()[(i, c - p - 2)],
            }
        });
        let beta = logistic_irls(&x, data.y(), 100, 1e-10).ok_or_else(|| OdtrError::LearnerFailed {
            name: BASELINE_LABEL.into(),
            reason: "logistic fit failed".into(),
        })?;
        Ok(Self { contrast: beta[p + 1..].to_vec() })
    }

    pub fn predict(&self, w: &DMatrix<f64>) -> TreatmentRule {
        let rule = rows(w)
            .map(|r| {
                let lin = self.contrast[0] + r.iter().zip(&self.contrast[1..]).map(|(a, b)| a * b).sum::<f64>();
                u8::from(lin > 0.0)
            })
            .collect();
        TreatmentRule::new(rule).expect("binary")
    }
}

/// Where accuracy and value are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSample {
    /// A fresh draw of the given size per replication.
    Fresh(usize),
    /// The estimation sample itself.
    Estimation,
}

impl Default for EvalSample {
    fn default() -> Self {
        EvalSample::Fresh(EVAL_SAMPLE_SIZE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dgp: Dgp,
    pub n: usize,
    pub reps: usize,
    /// Ensemble configurations; their seeds are replaced per replication.
    pub configs: Vec<EnsembleConfig>,
    pub seed: u64,
    pub eval: EvalSample,
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: String,
    pub metrics: Option<RuleMetrics>,
    pub error: Option<String>,
}

/// Aggregate over the successful replications of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_accuracy: f64,
    pub mean_value: f64,
    pub mean_regret: f64,
    /// Sample variance of the regret; `None` with fewer than two replications.
    pub regret_variance: Option<f64>,
    /// Regret variance divided by that of the baseline.
    pub relative_variance: Option<f64>,
    pub value_q025: f64,
    pub value_q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dgp: Dgp,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub optimal_value: f64,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_variance(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    Some(x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64)
}

/// Seed of replication `r`, shared by every configuration.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    rng::derive_seed(seed, rng::REPLICATION, &[r as u64])
}

/// Estimation sample of replication `r`.
pub fn replication_data(dgp: Dgp, n: usize, seed: u64, r: usize) -> Result<Dataset> {
    sample_from(dgp, n, &mut rng::stream(seed, rng::DATA, &[r as u64]))
}

fn run_replication(spec: &ExperimentSpec, r: usize) -> Vec<ReplicationRecord> {
    let record = |method: String, res: Result<RuleMetrics>| match res {
        Ok(m) => ReplicationRecord { replication: r, method, metrics: Some(m), error: None },
        Err(e) => ReplicationRecord { replication: r, method, metrics: None, error: Some(e.to_string()) },
    };
    let data = match replication_data(spec.dgp, spec.n, spec.seed, r) {
        Ok(d) => d,
        Err(e) => {
            let mut out: Vec<_> = spec.configs.iter().map(|c| record(c.label(), Err(e.clone()))).collect();
            out.push(record(BASELINE_LABEL.into(), Err(e)));
            return out;
        }
    };
    let eval_w = match spec.eval {
        EvalSample::Fresh(m) => sample_covariates(m, &mut rng::stream(spec.seed, rng::EVALUATION, &[r as u64])),
        EvalSample::Estimation => data.w().clone(),
    };
    let rep_seed = replication_seed(spec.seed, r);

    let mut out = Vec::with_capacity(spec.configs.len() + 1);
    let fold_counts: BTreeSet<usize> = spec.configs.iter().map(|c| c.folds).collect();
    for v in fold_counts {
        let group: Vec<&EnsembleConfig> = spec.configs.iter().filter(|c| c.folds == v).collect();
        let libraries: Vec<_> = group.iter().map(|c| c.library).collect();
        let specs = union_candidates(&libraries, data.p());
        let pool = make_folds(data.n(), v, rep_seed).and_then(|f| CandidatePool::build(&data, f, &specs, rep_seed));
        for c in group {
            let res = pool.as_ref().map_err(Clone::clone).and_then(|pool| {
                let fit = pool.fit(c.with_seed(rep_seed))?;
                let rule = fit.predict_rule(&eval_w)?;
                evaluate_rule_metrics(spec.dgp, &eval_w, rule.assignments())
            });
            out.push((c, record(c.label(), res)));
        }
    }
    // Restore configuration order after grouping by fold count.
    let mut ordered: Vec<ReplicationRecord> = spec
        .configs
        .iter()
        .map(|c| {
            let i = out.iter().position(|(k, _)| *k == c).expect("every config fitted");
            out.remove(i).1
        })
        .collect();
    let baseline = GlmBaseline::fit(&data)
        .and_then(|b| evaluate_rule_metrics(spec.dgp, &eval_w, b.predict(&eval_w).assignments()));
    ordered.push(record(BASELINE_LABEL.into(), baseline));
    ordered
}

fn summarize(method: &str, records: &[ReplicationRecord], baseline_variance: Option<f64>) -> MethodSummary {
    let ok: Vec<RuleMetrics> = records.iter().filter(|r| r.method == method).filter_map(|r| r.metrics).collect();
    let failed = records.iter().filter(|r| r.method == method && r.metrics.is_none()).count();
    let mean = |f: fn(&RuleMetrics) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(f).sum::<f64>() / ok.len() as f64
        }
    };
    let regrets: Vec<f64> = ok.iter().map(|m| m.regret_approx).collect();
    let regret_variance = sample_variance(&regrets);
    let mut values: Vec<f64> = ok.iter().map(|m| m.value).collect();
    values.sort_by(f64::total_cmp);
    MethodSummary {
        method: method.to_string(),
        succeeded: ok.len(),
        failed,
        mean_accuracy: mean(|m| m.accuracy),
        mean_value: mean(|m| m.value),
        mean_regret: mean(|m| m.regret_approx),
        regret_variance,
        relative_variance: match (regret_variance, baseline_variance) {
            (Some(v), Some(b)) if b > 0.0 => Some(v / b),
            _ => None,
        },
        value_q025: quantile_sorted(&values, 0.025),
        value_q975: quantile_sorted(&values, 0.975),
    }
}

/// Runs every configuration and the parametric baseline on `spec.reps`
/// replications. Replication `r` draws its data from `(seed, r)`, so every
/// method sees the same datasets; results do not depend on the thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    if spec.reps == 0 {
        return Err(OdtrError::InvalidConfiguration("reps must be at least 1".into()));
    }
    if spec.n == 0 {
        return Err(OdtrError::InvalidConfiguration("n must be at least 1".into()));
    }
    for c in &spec.configs {
        validate_config(*c)?;
    }
    let optimal = optimal_value(spec.dgp);
    let records: Vec<ReplicationRecord> =
        (0..spec.reps).into_par_iter().map(|r| run_replication(spec, r)).collect::<Vec<_>>().concat();
    for rec in records.iter().filter(|r| r.error.is_some()) {
        log::warn!("replication {} of {} failed: {}", rec.replication, rec.method, rec.error.as_deref().unwrap_or(""));
    }
    let baseline = summarize(BASELINE_LABEL, &records, None);
    let base_var = baseline.regret_variance;
    let mut summaries: Vec<MethodSummary> =
        spec.configs.iter().map(|c| summarize(&c.label(), &records, base_var)).collect();
    summaries.push(summarize(BASELINE_LABEL, &records, base_var));
    Ok(ExperimentReport {
        dgp: spec.dgp,
        n: spec.n,
        reps: spec.reps,
        seed: spec.seed,
        optimal_value: optimal,
        records,
        summaries,
    })
}
