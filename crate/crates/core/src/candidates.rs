//! The closed set of candidate rule learners and the libraries built from
//! them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blip::{fit_blip_learner, BlipLearnerKind, BlipLearnerSpec, BlipSurface};
use crate::config::Library;
use crate::data::{Dataset, TreatmentRule};
use crate::direct::{fit_owl, OwlModel, OwlSpec, StaticRuleSpec};
use crate::error::Result;
use crate::folds::make_folds_from_stream;
use crate::nuisance::{
    fit_outcome_regression, fit_treatment_mechanism, NuisancePredictions, OutcomeRegression, TreatmentMechanism,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CandidateSpec {
    Blip(BlipLearnerSpec),
    Owl(OwlSpec),
    Static(StaticRuleSpec),
}

impl CandidateSpec {
    pub fn name(&self) -> String {
        match self {
            CandidateSpec::Blip(b) => b.name(),
            CandidateSpec::Owl(_) => "owl".into(),
            CandidateSpec::Static(s) if s.value == 1 => "treat.all".into(),
            CandidateSpec::Static(_) => "treat.none".into(),
        }
    }

    pub fn is_blip_based(&self) -> bool {
        matches!(self, CandidateSpec::Blip(_))
    }
}

fn blip(kind: BlipLearnerKind) -> CandidateSpec {
    CandidateSpec::Blip(BlipLearnerSpec::new(kind))
}

fn parametric(p: usize) -> Vec<CandidateSpec> {
    (0..p).map(|j| blip(BlipLearnerKind::UnivariateGlm(j))).collect()
}

fn machine_learning() -> Vec<CandidateSpec> {
    vec![
        blip(BlipLearnerKind::MainTermsGlm),
        blip(BlipLearnerKind::MeanOnly),
        blip(BlipLearnerKind::InteractionGlm),
        blip(BlipLearnerKind::RegressionTree),
        blip(BlipLearnerKind::NeuralNet),
    ]
}

fn maximizers() -> Vec<CandidateSpec> {
    vec![
        blip(BlipLearnerKind::QLearningPlugin),
        CandidateSpec::Owl(OwlSpec::default()),
        CandidateSpec::Static(StaticRuleSpec { value: 1 }),
        CandidateSpec::Static(StaticRuleSpec { value: 0 }),
    ]
}

/// Candidates of a library for data with `p` covariates, in canonical order:
/// univariate GLMs, machine-learning blip models, then Q-learning, OWL,
/// treat-all and treat-none.
pub fn library_candidates(library: Library, p: usize) -> Vec<CandidateSpec> {
    let mut out = Vec::new();
    if library.has_parametric() {
        out.extend(parametric(p));
    }
    if library.has_ml() {
        out.extend(machine_learning());
    }
    if !library.is_blip_only() {
        out.extend(maximizers());
    }
    out
}

/// Candidates of several libraries, deduplicated, in canonical order.
pub fn union_candidates(libraries: &[Library], p: usize) -> Vec<CandidateSpec> {
    let names: Vec<String> = libraries.iter().flat_map(|&l| library_candidates(l, p)).map(|c| c.name()).collect();
    library_candidates(Library::AllBlipPlusMaximizers, p).into_iter().filter(|c| names.contains(&c.name())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedCandidate {
    Blip(BlipSurface),
    Owl(OwlModel),
    Static(u8),
}

/// A candidate's predictions on a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutput {
    pub blip: Option<Vec<f64>>,
    pub rule: Vec<u8>,
}

impl FittedCandidate {
    pub fn predict(&self, w: &DMatrix<f64>) -> CandidateOutput {
        match self {
            FittedCandidate::Blip(s) => {
                let b = s.predict(w);
                let rule = TreatmentRule::from_blip(&b).into_inner();
                CandidateOutput { blip: Some(b), rule }
            }
            FittedCandidate::Owl(m) => CandidateOutput { blip: None, rule: m.predict(w).into_inner() },
            FittedCandidate::Static(v) => CandidateOutput { blip: None, rule: vec![*v; w.nrows()] },
        }
    }
}

/// Nuisance fits on one training sample and the pseudo-outcome they imply on
/// that sample.
#[derive(Debug, Clone)]
pub struct TrainingNuisance {
    pub q: OutcomeRegression,
    pub g: TreatmentMechanism,
    pub pseudo: Vec<f64>,
}

/// Fits `g` (intercept only) and the `Q` stack on `data`. The stack's inner
/// folds come from the `nuisance-folds` stream keyed by `key`.
pub fn fit_training_nuisance(data: &Dataset, inner_folds: usize, seed: u64, key: u64) -> Result<TrainingNuisance> {
    let g = fit_treatment_mechanism(data)?;
    let v = inner_folds.min(data.n()).max(2);
    let folds = make_folds_from_stream(data.n(), v, seed, rng::NUISANCE_FOLDS, &[key])?;
    let q = fit_outcome_regression(data, &folds)?;
    let pseudo = NuisancePredictions::compute(data, &q, &g).pseudo_outcome(data);
    Ok(TrainingNuisance { q, g, pseudo })
}

/// Fits one candidate on a training sample. `key` distinguishes training
/// samples for streams that must differ between folds.
pub fn fit_candidate(
    spec: &CandidateSpec,
    data: &Dataset,
    nuisance: &TrainingNuisance,
    seed: u64,
    key: u64,
) -> Result<(FittedCandidate, Vec<String>)> {
    match spec {
        CandidateSpec::Blip(b) => {
            let fit = fit_blip_learner(b, data, &nuisance.pseudo, &nuisance.q, rng::derive_seed(seed, "fit", &[key]))?;
            Ok((FittedCandidate::Blip(fit.surface), fit.diagnostics))
        }
        CandidateSpec::Owl(o) => {
            let fit = fit_owl(o, data, &nuisance.g, rng::derive_seed(seed, "owl", &[key]))?;
            Ok((FittedCandidate::Owl(fit.model), fit.diagnostics))
        }
        CandidateSpec::Static(s) => Ok((FittedCandidate::Static(s.value), Vec::new())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_sizes() {
        assert_eq!(library_candidates(Library::ParametricBlip, 4).len(), 4);
        assert_eq!(library_candidates(Library::MlBlip, 4).len(), 5);
        assert_eq!(library_candidates(Library::ParametricPlusMlBlip, 4).len(), 9);
        assert_eq!(library_candidates(Library::MlBlipPlusMaximizers, 4).len(), 9);
        assert_eq!(library_candidates(Library::AllBlipPlusMaximizers, 4).len(), 13);
        for lib in Library::ALL {
            let c = library_candidates(lib, 3);
            assert_eq!(lib.is_blip_only(), c.iter().all(|s| s.is_blip_based()));
        }
    }

    #[test]
    fn union_keeps_canonical_order() {
        let u = union_candidates(&[Library::MlBlip, Library::ParametricBlip], 2);
        let names: Vec<String> = u.iter().map(|c| c.name()).collect();
        assert_eq!(
            names,
            vec![
                "blip.glm.W1",
                "blip.glm.W2",
                "blip.glm",
                "blip.mean",
                "blip.glm.interaction",
                "blip.tree",
                "blip.nnet"
            ]
        );
    }
}
