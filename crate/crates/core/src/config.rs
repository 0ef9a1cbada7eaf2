//! Ensemble configuration and the library × metalearner × risk validity matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OdtrError, Result};

/// Candidate libraries. The first three hold blip estimators only; the last
/// two add Q-learning, OWL, and the static treat-all / treat-none rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Library {
    ParametricBlip,
    MlBlip,
    ParametricPlusMlBlip,
    MlBlipPlusMaximizers,
    AllBlipPlusMaximizers,
}

impl Library {
    pub const ALL: [Library; 5] = [
        Library::ParametricBlip,
        Library::MlBlip,
        Library::ParametricPlusMlBlip,
        Library::MlBlipPlusMaximizers,
        Library::AllBlipPlusMaximizers,
    ];

    pub fn is_blip_only(self) -> bool {
        matches!(self, Library::ParametricBlip | Library::MlBlip | Library::ParametricPlusMlBlip)
    }

    pub fn has_parametric(self) -> bool {
        matches!(self, Library::ParametricBlip | Library::ParametricPlusMlBlip | Library::AllBlipPlusMaximizers)
    }

    pub fn has_ml(self) -> bool {
        self != Library::ParametricBlip
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Library::ParametricBlip => "parametric_blip",
            Library::MlBlip => "ml_blip",
            Library::ParametricPlusMlBlip => "parametric_plus_ml_blip",
            Library::MlBlipPlusMaximizers => "ml_blip_plus_maximizers",
            Library::AllBlipPlusMaximizers => "all_blip_plus_maximizers",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metalearner {
    Discrete,
    BlipCombination,
    VoteCombination,
}

impl Metalearner {
    pub const ALL: [Metalearner; 3] =
        [Metalearner::Discrete, Metalearner::BlipCombination, Metalearner::VoteCombination];

    pub fn as_str(self) -> &'static str {
        match self {
            Metalearner::Discrete => "discrete",
            Metalearner::BlipCombination => "blip_combination",
            Metalearner::VoteCombination => "vote_combination",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    /// Squared error of the blip against the pseudo-outcome.
    Mse,
    /// Negative CV-TMLE estimate of the mean outcome under the rule.
    MeanOutcomeUnderRule,
}

impl RiskKind {
    pub const ALL: [RiskKind; 2] = [RiskKind::Mse, RiskKind::MeanOutcomeUnderRule];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::Mse => "mse",
            RiskKind::MeanOutcomeUnderRule => "mean_outcome_under_rule",
        }
    }
}

macro_rules! display_via_as_str {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    )*};
}
display_via_as_str!(Library, Metalearner, RiskKind);

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub library: Library,
    pub metalearner: Metalearner,
    pub risk: RiskKind,
    pub folds: usize,
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn new(library: Library, metalearner: Metalearner, risk: RiskKind) -> Self {
        Self { library, metalearner, risk, folds: DEFAULT_FOLDS, seed: 0 }
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Short label such as `parametric_blip/discrete/mse`.
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.library, self.metalearner, self.risk)
    }
}

/// Accepts the configuration iff its (library, metalearner, risk) triple is
/// constructible; otherwise names the violated constraint.
pub fn validate_config(config: EnsembleConfig) -> Result<EnsembleConfig> {
    use Metalearner::*;
    use RiskKind::*;
    if config.folds < 2 {
        return Err(OdtrError::InvalidConfiguration(format!(
            "cross-validation needs at least 2 folds, got {}",
            config.folds
        )));
    }
    let blip_only = config.library.is_blip_only();
    let violation = match (config.metalearner, config.risk) {
        (BlipCombination, _) if !blip_only => Some(
            "blip_combination metalearner requires a blip-only library; \
             direct maximizers and static rules produce no blip",
        ),
        (_, Mse) if !blip_only => {
            Some("mse risk requires a blip-only library; direct maximizers and static rules produce no blip")
        }
        (VoteCombination, Mse) => Some("mse risk cannot score a vote_combination; the vote produces no blip estimate"),
        _ => None,
    };
    match violation {
        Some(rule) => Err(OdtrError::InvalidConfiguration(format!("{}: {rule}", config.label()))),
        None => Ok(config),
    }
}

/// All valid (library, metalearner, risk) triples in canonical order.
pub fn valid_configs() -> Vec<EnsembleConfig> {
    let mut out = Vec::new();
    for library in Library::ALL {
        for metalearner in Metalearner::ALL {
            for risk in RiskKind::ALL {
                let c = EnsembleConfig::new(library, metalearner, risk);
                if validate_config(c).is_ok() {
                    out.push(c);
                }
            }
        }
    }
    out
}
