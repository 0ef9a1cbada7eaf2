//! Cross-validated fitting of candidate rules and the ensemble built on them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{
    fit_candidate, fit_training_nuisance, library_candidates, CandidateOutput, CandidateSpec, FittedCandidate,
};
use crate::config::{validate_config, EnsembleConfig, Metalearner};
use crate::data::{Dataset, TreatmentRule};
use crate::error::{OdtrError, Result};
use crate::folds::{make_folds, FoldAssignment};
use crate::metalearner::{combine_blip, combine_vote, optimize_weights, CandidatePredictions};
use crate::nuisance::NuisancePredictions;
use crate::simplex::WeightVector;
use crate::tmle::CvNuisance;

/// A candidate excluded from the ensemble and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub name: String,
    pub reason: String,
}

struct FoldFit {
    rows: Vec<usize>,
    nuisance: NuisancePredictions,
    outputs: Vec<Result<CandidateOutput>>,
    diagnostics: Vec<String>,
}

fn fit_fold(data: &Dataset, folds: &FoldAssignment, k: usize, specs: &[CandidateSpec], seed: u64) -> Result<FoldFit> {
    let train = data.subset(&folds.training_rows(k));
    let rows = folds.validation_rows(k);
    let valid = data.subset(&rows);
    let nu = fit_training_nuisance(&train, folds.v(), seed, k as u64)?;
    let nuisance = NuisancePredictions::compute(&valid, &nu.q, &nu.g);
    let mut diagnostics = Vec::new();
    let outputs = specs
        .iter()
        .map(|spec| {
            fit_candidate(spec, &train, &nu, seed, k as u64).map(|(fit, diag)| {
                diagnostics.extend(diag.into_iter().map(|d| format!("fold {k}: {d}")));
                fit.predict(valid.w())
            })
        })
        .collect();
    Ok(FoldFit { rows, nuisance, outputs, diagnostics })
}

/// Cross-validated and full-sample fits of a set of candidates, shared by
/// every ensemble configuration whose library is a subset of them.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    names: Vec<String>,
    specs: Vec<CandidateSpec>,
    p: usize,
    w: DMatrix<f64>,
    cv: CvNuisance,
    predictions: Vec<CandidateOutput>,
    full: Vec<FittedCandidate>,
    dropped: Vec<DroppedCandidate>,
    diagnostics: Vec<String>,
}

impl CandidatePool {
    /// Fits every candidate on each training fold and on the full sample.
    /// The nuisance stack inside training fold `k` draws its folds from the
    /// `nuisance-folds` stream keyed by `k`; the full-sample stack uses key
    /// `V`. A candidate failing anywhere is dropped with its reason.
    pub fn build(data: &Dataset, folds: FoldAssignment, specs: &[CandidateSpec], seed: u64) -> Result<Self> {
        if folds.n() != data.n() {
            return Err(OdtrError::DimensionMismatch { expected: data.n(), got: folds.n() });
        }
        let v = folds.v();
        let n = data.n();
        let fold_fits: Vec<FoldFit> =
            (0..v).into_par_iter().map(|k| fit_fold(data, &folds, k, specs, seed)).collect::<Result<_>>()?;

        let full_nu = fit_training_nuisance(data, v, seed, v as u64)?;
        let full_fits: Vec<Result<(FittedCandidate, Vec<String>)>> =
            specs.par_iter().map(|spec| fit_candidate(spec, data, &full_nu, seed, v as u64)).collect();

        let mut nuisance = NuisancePredictions {
            q_observed: vec![0.0; n],
            q1: vec![0.0; n],
            q0: vec![0.0; n],
            g_observed: vec![0.0; n],
        };
        let mut diagnostics = Vec::new();
        for ff in &fold_fits {
            for (t, &i) in ff.rows.iter().enumerate() {
                nuisance.q_observed[i] = ff.nuisance.q_observed[t];
                nuisance.q1[i] = ff.nuisance.q1[t];
                nuisance.q0[i] = ff.nuisance.q0[t];
                nuisance.g_observed[i] = ff.nuisance.g_observed[t];
            }
            diagnostics.extend(ff.diagnostics.iter().cloned());
        }
        let cv = CvNuisance::new(folds, data, nuisance)?;

        let mut kept_specs = Vec::new();
        let mut names = Vec::new();
        let mut predictions = Vec::new();
        let mut full = Vec::new();
        let mut dropped = Vec::new();
        for (j, (spec, full_fit)) in specs.iter().zip(full_fits).enumerate() {
            let name = spec.name();
            let mut blip = spec.is_blip_based().then(|| vec![0.0; n]);
            let mut rule = vec![0u8; n];
            let mut failure = None;
            for ff in &fold_fits {
                match &ff.outputs[j] {
                    Ok(out) => {
                        for (t, &i) in ff.rows.iter().enumerate() {
                            rule[i] = out.rule[t];
                            if let (Some(b), Some(ob)) = (blip.as_mut(), out.blip.as_ref()) {
                                b[i] = ob[t];
                            }
                        }
                    }
                    Err(e) => {
                        failure.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            match (failure, full_fit) {
                (None, Ok((fit, diag))) => {
                    diagnostics.extend(diag.into_iter().map(|d| format!("full sample: {d}")));
                    kept_specs.push(spec.clone());
                    names.push(name);
                    predictions.push(CandidateOutput { blip, rule });
                    full.push(fit);
                }
                (Some(reason), _) | (None, Err(OdtrError::LearnerFailed { reason, .. })) => {
                    log::warn!("dropping candidate {name}: {reason}");
                    dropped.push(DroppedCandidate { name, reason });
                }
                (None, Err(e)) => {
                    let reason = e.to_string();
                    log::warn!("dropping candidate {name}: {reason}");
                    dropped.push(DroppedCandidate { name, reason });
                }
            }
        }
        Ok(Self {
            names,
            specs: kept_specs,
            p: data.p(),
            w: data.w().clone(),
            cv,
            predictions,
            full,
            dropped,
            diagnostics,
        })
    }

    /// Surviving candidate names, in canonical order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn specs(&self) -> &[CandidateSpec] {
        &self.specs
    }

    pub fn cv(&self) -> &CvNuisance {
        &self.cv
    }

    pub fn dropped(&self) -> &[DroppedCandidate] {
        &self.dropped
    }

    /// Cross-validated predictions of the named candidates.
    pub fn predictions(&self, names: &[String]) -> CandidatePredictions {
        let idx: Vec<usize> = names.iter().filter_map(|n| self.names.iter().position(|m| m == n)).collect();
        CandidatePredictions {
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            blip: idx.iter().map(|&j| self.predictions[j].blip.clone()).collect(),
            rule: idx.iter().map(|&j| self.predictions[j].rule.clone()).collect(),
        }
    }

    /// Fits one ensemble configuration from the pooled candidate fits.
    /// `config.folds` is ignored in favour of the pool's folds.
    pub fn fit(&self, config: EnsembleConfig) -> Result<FittedOdtr> {
        let config = validate_config(config)?;
        let wanted: Vec<String> = library_candidates(config.library, self.p).iter().map(CandidateSpec::name).collect();
        let missing: Vec<&String> =
            wanted.iter().filter(|n| !self.names.contains(n) && !self.dropped.iter().any(|d| &d.name == *n)).collect();
        if !missing.is_empty() {
            return Err(OdtrError::InvalidConfiguration(format!(
                "candidate pool lacks {missing:?} required by library {}",
                config.library
            )));
        }
        let preds = self.predictions(&wanted);
        if preds.is_empty() {
            return Err(OdtrError::NoViableCandidates);
        }
        let opt = optimize_weights(&preds, config.risk, config.metalearner, &self.cv, config.seed)?;
        let candidates: Vec<FittedCandidate> = preds
            .names
            .iter()
            .map(|n| self.full[self.names.iter().position(|m| m == n).expect("pooled name")].clone())
            .collect();
        let dropped = self.dropped.iter().filter(|d| wanted.contains(&d.name)).cloned().collect();
        let mut fitted = FittedOdtr {
            config,
            p: self.p,
            candidate_names: preds.names.clone(),
            alpha: opt.alpha,
            candidates,
            candidate_cv_risks: opt.candidate_risks,
            cv_risk: opt.cv_risk,
            folds: self.cv.folds.clone(),
            dropped,
            diagnostics: self.diagnostics.clone(),
            training_rule: Vec::new(),
            training_blip: None,
        };
        let (rule, blip) = fitted.predict(&self.w)?;
        fitted.training_rule = rule.into_inner();
        fitted.training_blip = blip;
        Ok(fitted)
    }
}

/// A fitted ensemble rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedOdtr {
    pub config: EnsembleConfig,
    /// Number of covariates the rule expects.
    pub p: usize,
    pub candidate_names: Vec<String>,
    pub alpha: WeightVector,
    /// Full-sample fits, aligned with `candidate_names`.
    pub candidates: Vec<FittedCandidate>,
    pub candidate_cv_risks: Vec<f64>,
    pub cv_risk: f64,
    pub folds: FoldAssignment,
    pub dropped: Vec<DroppedCandidate>,
    pub diagnostics: Vec<String>,
    /// The rule on the training rows.
    pub training_rule: Vec<u8>,
    /// The ensemble blip on the training rows, when the ensemble has one.
    pub training_blip: Option<Vec<f64>>,
}

impl FittedOdtr {
    /// Applies the ensemble to new covariates. Returns the rule and, for
    /// blip-valued ensembles, the blip.
    pub fn predict(&self, w: &DMatrix<f64>) -> Result<(TreatmentRule, Option<Vec<f64>>)> {
        if w.ncols() != self.p {
            return Err(OdtrError::DimensionMismatch { expected: self.p, got: w.ncols() });
        }
        let outputs: Vec<CandidateOutput> = self.candidates.iter().map(|c| c.predict(w)).collect();
        combine(self.config.metalearner, &self.alpha, &outputs)
    }

    pub fn predict_rule(&self, w: &DMatrix<f64>) -> Result<TreatmentRule> {
        self.predict(w).map(|(r, _)| r)
    }

    /// Weight of each candidate by name.
    pub fn weights(&self) -> impl Iterator<Item = (&str, f64)> {
        self.candidate_names.iter().map(String::as_str).zip(self.alpha.as_slice().iter().copied())
    }
}

/// Combines candidate outputs under a metalearner.
pub fn combine(
    metalearner: Metalearner,
    alpha: &WeightVector,
    outputs: &[CandidateOutput],
) -> Result<(TreatmentRule, Option<Vec<f64>>)> {
    match metalearner {
        Metalearner::Discrete => {
            let chosen = outputs.get(alpha.argmax()).ok_or(OdtrError::NoViableCandidates)?;
            Ok((TreatmentRule::new(chosen.rule.clone())?, chosen.blip.clone()))
        }
        Metalearner::BlipCombination => {
            let cols = outputs.iter().map(|o| o.blip.as_deref()).collect::<Option<Vec<&[f64]>>>().ok_or_else(|| {
                OdtrError::InvalidConfiguration("blip combination over a candidate without a blip".into())
            })?;
            let b = combine_blip(&cols, alpha)?;
            Ok((TreatmentRule::from_blip(&b), Some(b)))
        }
        Metalearner::VoteCombination => {
            let rules: Vec<&[u8]> = outputs.iter().map(|o| o.rule.as_slice()).collect();
            Ok((combine_vote(&rules, alpha)?, None))
        }
    }
}

/// Outer folds for an ensemble fit, drawn from the `folds` stream.
pub fn outer_folds(n: usize, config: &EnsembleConfig) -> Result<FoldAssignment> {
    make_folds(n, config.folds, config.seed)
}

/// Validates `config`, fits its library by cross-validation and returns the
/// ensemble.
pub fn fit_odtr_superlearner(data: &Dataset, config: EnsembleConfig) -> Result<FittedOdtr> {
    let config = validate_config(config)?;
    if config.folds > data.n() {
        return Err(OdtrError::InvalidFolds(format!("{} folds for {} rows", config.folds, data.n())));
    }
    let folds = outer_folds(data.n(), &config)?;
    let specs = library_candidates(config.library, data.p());
    CandidatePool::build(data, folds, &specs, config.seed)?.fit(config)
}
