//! The JSON run configuration.

use std::path::{Path, PathBuf};

use odtr::config::DEFAULT_FOLDS;
use odtr::simulation::EVAL_SAMPLE_SIZE;
use odtr::{valid_configs, Dgp, EnsembleConfig, EvalSample, Library, Metalearner, RiskKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Replications per configuration in the default, scaled-down study.
pub const SCALED_REPS: usize = 200;
/// Replications in full-scale mode.
pub const FULL_SCALE_REPS: usize = 1000;
/// Replications in smoke mode.
pub const SMOKE_REPS: usize = 20;
pub const DEFAULT_N: usize = 1000;
pub const SEED_ENV: &str = "ODTR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Fit,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSampleKind {
    Fresh,
    Estimation,
}

/// Rules `evaluate` can score without a fit artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRule {
    Optimal,
    TreatAll,
    TreatNone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub mode: Mode,
    #[serde(default)]
    pub dgp: Option<Dgp>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub reps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub library: Option<Library>,
    #[serde(default)]
    pub metalearner: Option<Metalearner>,
    #[serde(default)]
    pub risk: Option<RiskKind>,
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub input_csv: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub full_scale: bool,
    /// `evaluate`: fit artifact written by `fit`.
    #[serde(default)]
    pub fit_json: Option<PathBuf>,
    /// `evaluate`: score a reference rule instead of a fit artifact.
    #[serde(default)]
    pub rule: Option<ReferenceRule>,
    /// `simulate`: where accuracy and value are computed.
    #[serde(default)]
    pub eval_sample: Option<EvalSampleKind>,
    /// Rows in a fresh evaluation sample.
    #[serde(default)]
    pub eval_n: Option<usize>,
    /// `fit`: negate Y before scaling, for outcomes where smaller is better.
    #[serde(default)]
    pub negate_y: bool,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub full_scale: bool,
    pub smoke: bool,
    pub negate_y: bool,
    pub seed: Option<u64>,
}

impl Overrides {
    /// Reads the seed override from the environment.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV} must be a nonnegative integer, got `{raw}`")))?;
            self.seed = Some(seed);
        }
        Ok(self)
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.folds.is_some_and(|v| v < 2) {
            return Err(CliError::Config(format!("folds must be at least 2, got {}", cfg.folds.unwrap_or(0))));
        }
        if cfg.n == Some(0) || cfg.reps == Some(0) || cfg.eval_n == Some(0) {
            return Err(CliError::Config("n, reps and eval_n must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn apply(mut self, o: Overrides) -> Self {
        self.full_scale |= o.full_scale;
        self.negate_y |= o.negate_y;
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if o.smoke {
            self.reps = Some(SMOKE_REPS);
        } else if self.full_scale {
            self.reps = Some(FULL_SCALE_REPS);
        }
        self
    }

    pub fn expect_mode(&self, mode: Mode) -> Result<()> {
        if self.mode != mode {
            return Err(CliError::Config(format!(
                "config has mode {:?} but the {:?} command was run",
                self.mode, mode
            )));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn folds(&self) -> usize {
        self.folds.unwrap_or(DEFAULT_FOLDS)
    }

    pub fn reps(&self) -> usize {
        self.reps.unwrap_or(SCALED_REPS)
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or(DEFAULT_N)
    }

    pub fn dgp(&self) -> Result<Dgp> {
        self.dgp.ok_or_else(|| CliError::Config("`dgp` (1 or 2) is required".into()))
    }

    pub fn eval_sample(&self) -> EvalSample {
        match self.eval_sample {
            Some(EvalSampleKind::Estimation) => EvalSample::Estimation,
            _ => EvalSample::Fresh(self.eval_n.unwrap_or(EVAL_SAMPLE_SIZE)),
        }
    }

    /// The single configuration named by `library`, `metalearner` and `risk`,
    /// validated against the constructible combinations.
    pub fn ensemble(&self) -> Result<EnsembleConfig> {
        let (Some(l), Some(m), Some(r)) = (self.library, self.metalearner, self.risk) else {
            return Err(CliError::Config("`library`, `metalearner` and `risk` are all required".into()));
        };
        let config = EnsembleConfig::new(l, m, r).with_folds(self.folds()).with_seed(self.seed());
        Ok(odtr::validate_config(config)?)
    }

    /// Every valid configuration matching the keys that are present. A fully
    /// specified but invalid triple is an error naming the violated
    /// constraint.
    pub fn ensembles(&self) -> Result<Vec<EnsembleConfig>> {
        if self.library.is_some() && self.metalearner.is_some() && self.risk.is_some() {
            return Ok(vec![self.ensemble()?]);
        }
        let out: Vec<EnsembleConfig> = valid_configs()
            .into_iter()
            .filter(|c| self.library.is_none_or(|l| l == c.library))
            .filter(|c| self.metalearner.is_none_or(|m| m == c.metalearner))
            .filter(|c| self.risk.is_none_or(|r| r == c.risk))
            .map(|c| c.with_folds(self.folds()).with_seed(self.seed()))
            .collect();
        if out.is_empty() {
            return Err(CliError::Config(
                "no valid configuration matches the given library, metalearner and risk".into(),
            ));
        }
        Ok(out)
    }
}
