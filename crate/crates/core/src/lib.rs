//! SuperLearner estimation of optimal dynamic treatment rules for a binary
//! point treatment.
//!
//! An ensemble combines candidate rule learners (blip regressions on a
//! doubly-robust pseudo-outcome, Q-learning, outcome weighted learning and
//! static rules) with weights chosen by cross-validation. The weights
//! minimize either the mean squared error against the pseudo-outcome or the
//! negative CV-TMLE estimate of the mean outcome under the combined rule.
//!
//! ```no_run
//! use odtr::{fit_odtr_superlearner, Dgp, DgpSpec, EnsembleConfig, Library, Metalearner, RiskKind};
//!
//! let data = odtr::dgp_sample(DgpSpec { dgp: Dgp::Two, n: 500, seed: 1 }).unwrap();
//! let config = EnsembleConfig::new(Library::ParametricBlip, Metalearner::Discrete, RiskKind::Mse);
//! let fit = fit_odtr_superlearner(&data, config).unwrap();
//! println!("{:?}", fit.alpha);
//! ```

pub mod blip;
pub mod candidates;
pub mod config;
pub mod data;
pub mod direct;
pub mod error;
pub mod folds;
pub mod linalg;
pub mod metalearner;
pub mod nnet;
pub mod nuisance;
pub mod rng;
pub mod simplex;
pub mod simulation;
pub mod superlearner;
pub mod tmle;
pub mod tree;

pub use candidates::{library_candidates, union_candidates, CandidateSpec, FittedCandidate};
pub use config::{valid_configs, validate_config, EnsembleConfig, Library, Metalearner, RiskKind};
pub use data::{Dataset, TreatmentRule};
pub use error::{OdtrError, Result};
pub use folds::{make_folds, FoldAssignment};
pub use metalearner::{combine_blip, combine_vote, optimize_weights, risk_mse};
pub use simplex::WeightVector;
pub use simulation::{
    dgp_sample, evaluate_rule_metrics, monte_carlo_truth, run_experiment, Dgp, DgpSpec, EvalSample, ExperimentSpec,
    RuleMetrics,
};
pub use superlearner::{fit_odtr_superlearner, CandidatePool, FittedOdtr};
pub use tmle::{tmle_mean_under_rule, CvNuisance, TmleEvaluator};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
