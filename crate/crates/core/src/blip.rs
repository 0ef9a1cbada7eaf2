//! Blip-function learners: regressions of the pseudo-outcome on `W`, plus the
//! Q-learning plug-in `Q(1, W) - Q(0, W)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TreatmentRule};
use crate::error::{OdtrError, Result};
use crate::linalg::{least_squares, Design};
use crate::nnet::{NetParams, NeuralNet};
use crate::nuisance::OutcomeRegression;
use crate::tree::{RegressionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlipLearnerKind {
    /// Linear regression of `D` on covariate `j` alone.
    UnivariateGlm(usize),
    MainTermsGlm,
    MeanOnly,
    /// Main terms plus all pairwise covariate products.
    InteractionGlm,
    RegressionTree,
    NeuralNet,
    QLearningPlugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlipLearnerSpec {
    pub kind: BlipLearnerKind,
    pub tree: TreeParams,
    pub net: NetParams,
}

impl BlipLearnerSpec {
    pub fn new(kind: BlipLearnerKind) -> Self {
        Self { kind, tree: TreeParams::default(), net: NetParams::default() }
    }

    pub fn name(&self) -> String {
        match self.kind {
            BlipLearnerKind::UnivariateGlm(j) => format!("blip.glm.W{}", j + 1),
            BlipLearnerKind::MainTermsGlm => "blip.glm".into(),
            BlipLearnerKind::MeanOnly => "blip.mean".into(),
            BlipLearnerKind::InteractionGlm => "blip.glm.interaction".into(),
            BlipLearnerKind::RegressionTree => "blip.tree".into(),
            BlipLearnerKind::NeuralNet => "blip.nnet".into(),
            BlipLearnerKind::QLearningPlugin => "q.learning".into(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |reason: String| Err(OdtrError::LearnerFailed { name: self.name(), reason });
        if let BlipLearnerKind::UnivariateGlm(j) = self.kind {
            if j >= p {
                return bad(format!("covariate index {j} out of range for {p} covariates"));
            }
        }
        if self.tree.max_depth == 0 || self.tree.min_leaf == 0 {
            return bad("tree depth and leaf size must be positive".into());
        }
        if self.net.hidden == 0 || self.net.restarts == 0 || self.net.weight_decay < 0.0 || self.net.step_size <= 0.0 {
            return bad("invalid network hyperparameters".into());
        }
        Ok(())
    }
}

/// A fitted blip estimate `B(w)`. The implied rule is `B(w) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlipSurface {
    Linear { design: Design, coefs: Vec<f64> },
    Constant(f64),
    Tree(RegressionTree),
    Net(NeuralNet),
    Plugin(Box<OutcomeRegression>),
}

impl BlipSurface {
    pub fn predict_row(&self, w: &[f64]) -> f64 {
        match self {
            BlipSurface::Linear { design, coefs } => {
                let mut buf = Vec::with_capacity(coefs.len());
                design.expand_into(w, &mut buf);
                crate::linalg::dot(&buf, coefs)
            }
            BlipSurface::Constant(c) => *c,
            BlipSurface::Tree(t) => t.predict_row(w),
            BlipSurface::Net(net) => net.predict_row(w),
            BlipSurface::Plugin(q) => q.predict(1, w) - q.predict(0, w),
        }
    }

    pub fn predict(&self, w: &DMatrix<f64>) -> Vec<f64> {
        match self {
            BlipSurface::Tree(t) => t.predict(w),
            BlipSurface::Net(net) => net.predict(w),
            BlipSurface::Plugin(q) => {
                let q1 = q.predict_at(1, w);
                let q0 = q.predict_at(0, w);
                q1.iter().zip(&q0).map(|(a, b)| a - b).collect()
            }
            _ => {
                let mut row = vec![0.0; w.ncols()];
                (0..w.nrows())
                    .map(|i| {
                        for (j, r) in row.iter_mut().enumerate() {
                            *r = w[(i, j)];
                        }
                        self.predict_row(&row)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipFit {
    pub surface: BlipSurface,
    pub diagnostics: Vec<String>,
}

/// Fits one blip learner. `pseudo` must come from nuisances fit on the same
/// rows as `data`; the plug-in ignores it and uses `q` directly. `seed` keys
/// the network's restarts together with the learner name.
pub fn fit_blip_learner(
    spec: &BlipLearnerSpec,
    data: &Dataset,
    pseudo: &[f64],
    q: &OutcomeRegression,
    seed: u64,
) -> Result<BlipFit> {
    spec.validate(data.p())?;
    if pseudo.len() != data.n() {
        return Err(OdtrError::DimensionMismatch { expected: data.n(), got: pseudo.len() });
    }
    let fail = |reason: &str| OdtrError::LearnerFailed { name: spec.name(), reason: reason.into() };
    let mut diagnostics = Vec::new();
    let linear = |design: Design| -> Result<BlipSurface> {
        let coefs = least_squares(&design.matrix(data.w()), pseudo).ok_or_else(|| fail("singular design"))?;
        Ok(BlipSurface::Linear { design, coefs })
    };
    let surface = match spec.kind {
        BlipLearnerKind::UnivariateGlm(j) => linear(Design::Univariate(j))?,
        BlipLearnerKind::MainTermsGlm => linear(Design::MainTerms)?,
        BlipLearnerKind::InteractionGlm => linear(Design::Pairwise)?,
        BlipLearnerKind::MeanOnly => BlipSurface::Constant(pseudo.iter().sum::<f64>() / pseudo.len() as f64),
        BlipLearnerKind::RegressionTree => BlipSurface::Tree(RegressionTree::fit(data.w(), pseudo, spec.tree)),
        BlipLearnerKind::NeuralNet => {
            let stream = format!("nnet/{}", spec.name());
            let net = NeuralNet::fit(data.w(), pseudo, spec.net, seed, &stream);
            if !net.training_loss.is_finite() {
                return Err(fail("non-finite training loss on every restart"));
            }
            if !net.converged {
                diagnostics.push(format!("{}: training had not converged; returning best iterate", spec.name()));
            }
            BlipSurface::Net(net)
        }
        BlipLearnerKind::QLearningPlugin => BlipSurface::Plugin(Box::new(q.clone())),
    };
    Ok(BlipFit { surface, diagnostics })
}

/// Rowwise `B(w) > 0`.
pub fn rule_from_blip(surface: &BlipSurface, data: &Dataset) -> TreatmentRule {
    TreatmentRule::from_blip(&surface.predict(data.w()))
}
