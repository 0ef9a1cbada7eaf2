//! The `simulate`, `fit` and `evaluate` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use odtr::simulation::{replication_seed, sample_covariates, ExperimentReport, BASELINE_LABEL};
use odtr::{
    evaluate_rule_metrics, fit_odtr_superlearner, rng, run_experiment, Dgp, EnsembleConfig, ExperimentSpec, FittedOdtr,
    RuleMetrics,
};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, ReferenceRule, RunConfigFile};
use crate::error::{CliError, Result};
use crate::ingest::{read_csv, ImputedColumn, OutcomeScaling};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPLICATIONS_CSV: &str = "replications.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const RULE_CSV: &str = "rule.csv";
pub const ALPHA_CSV: &str = "alpha.csv";
pub const FIT_SUMMARY_JSON: &str = "fit_summary.json";
pub const FIT_JSON: &str = "fit.json";
pub const METRICS_JSON: &str = "metrics.json";

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(fs::File::create(path).map_err(CliError::io(path))?))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(CliError::io(path))
}

/// Settings echoed into the manifest. The output directory is left out so
/// that runs writing to different places still produce identical files.
#[derive(Debug, Serialize)]
struct ManifestConfig {
    mode: Mode,
    dgp: Dgp,
    n: usize,
    reps: usize,
    seed: u64,
    folds: usize,
    full_scale: bool,
    eval_sample: odtr::EvalSample,
    configs: Vec<String>,
    library: Option<odtr::Library>,
    metalearner: Option<odtr::Metalearner>,
    risk: Option<odtr::RiskKind>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    odtr_version: &'static str,
    cli_version: &'static str,
    config: ManifestConfig,
    optimal_value: f64,
    replication_seeds: Vec<u64>,
    files: [&'static str; 2],
}

/// Outcome of `simulate`.
#[derive(Debug)]
pub struct SimulateOutput {
    pub report: ExperimentReport,
    pub output_dir: PathBuf,
}

pub fn simulate(cfg: &RunConfigFile) -> Result<SimulateOutput> {
    cfg.expect_mode(Mode::Simulate)?;
    let dgp = cfg.dgp()?;
    let configs = cfg.ensembles()?;
    let spec = ExperimentSpec {
        dgp,
        n: cfg.n(),
        reps: cfg.reps(),
        configs: configs.clone(),
        seed: cfg.seed(),
        eval: cfg.eval_sample(),
    };
    log::info!("simulating {} configurations, {} replications of n = {}", configs.len(), spec.reps, spec.n);
    let report = run_experiment(&spec)?;

    create_dir(&cfg.output_dir)?;
    write_summary(&cfg.output_dir.join(SUMMARY_CSV), &report, &configs)?;
    write_replications(&cfg.output_dir.join(REPLICATIONS_CSV), &report)?;
    let manifest = Manifest {
        odtr_version: odtr::VERSION,
        cli_version: env!("CARGO_PKG_VERSION"),
        config: ManifestConfig {
            mode: cfg.mode,
            dgp,
            n: spec.n,
            reps: spec.reps,
            seed: spec.seed,
            folds: cfg.folds(),
            full_scale: cfg.full_scale,
            eval_sample: spec.eval,
            configs: configs.iter().map(EnsembleConfig::label).collect(),
            library: cfg.library,
            metalearner: cfg.metalearner,
            risk: cfg.risk,
        },
        optimal_value: report.optimal_value,
        replication_seeds: (0..spec.reps).map(|r| replication_seed(spec.seed, r)).collect(),
        files: [SUMMARY_CSV, REPLICATIONS_CSV],
    };
    write_json(&cfg.output_dir.join(MANIFEST_JSON), &manifest)?;
    Ok(SimulateOutput { report, output_dir: cfg.output_dir.clone() })
}

fn write_summary(path: &Path, report: &ExperimentReport, configs: &[EnsembleConfig]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "method",
        "library",
        "metalearner",
        "risk",
        "succeeded",
        "failed",
        "mean_accuracy",
        "mean_value",
        "mean_regret",
        "regret_variance",
        "relative_variance",
        "value_q025",
        "value_q975",
    ])?;
    for s in &report.summaries {
        let parts: [String; 3] = match configs.iter().find(|c| c.label() == s.method) {
            Some(c) => [c.library.to_string(), c.metalearner.to_string(), c.risk.to_string()],
            None => [BASELINE_LABEL.to_string(), String::new(), String::new()],
        };
        w.write_record([
            s.method.clone(),
            parts[0].clone(),
            parts[1].clone(),
            parts[2].clone(),
            s.succeeded.to_string(),
            s.failed.to_string(),
            num(s.mean_accuracy),
            num(s.mean_value),
            num(s.mean_regret),
            opt_num(s.regret_variance),
            opt_num(s.relative_variance),
            num(s.value_q025),
            num(s.value_q975),
        ])?;
    }
    flush(w, path)
}

fn write_replications(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["replication", "method", "accuracy", "value", "regret_approx", "fraction_treated", "error"])?;
    for r in &report.records {
        let m = r.metrics;
        w.write_record([
            r.replication.to_string(),
            r.method.clone(),
            opt_num(m.map(|m| m.accuracy)),
            opt_num(m.map(|m| m.value)),
            opt_num(m.map(|m| m.regret_approx)),
            opt_num(m.map(|m| m.fraction_treated)),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    flush(w, path)
}

/// Everything `evaluate` needs to reapply a fitted rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub odtr_version: String,
    pub covariates: Vec<String>,
    pub imputed: Vec<ImputedColumn>,
    pub scaling: OutcomeScaling,
    pub fit: FittedOdtr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub covariates: Vec<String>,
    pub config: String,
    pub fraction_treated: f64,
    pub cv_risk: f64,
    pub dropped: Vec<String>,
    pub diagnostics: Vec<String>,
    pub imputed: Vec<ImputedColumn>,
    pub scaling: OutcomeScaling,
}

pub fn fit(cfg: &RunConfigFile) -> Result<FitArtifact> {
    cfg.expect_mode(Mode::Fit)?;
    let input = cfg.input_csv.as_ref().ok_or_else(|| CliError::Config("`input_csv` is required for fit".into()))?;
    let config = cfg.ensemble()?;
    let ingested = read_csv(input, cfg.negate_y)?;
    let data = &ingested.data;
    if config.folds > data.n() {
        return Err(CliError::Config(format!("{} folds requested for {} rows", config.folds, data.n())));
    }
    log::info!("fitting {} on {} rows, {} covariates", config.label(), data.n(), data.p());
    let fitted = fit_odtr_superlearner(data, config)?;
    for d in &fitted.diagnostics {
        log::warn!("{d}");
    }

    create_dir(&cfg.output_dir)?;
    let rule_path = cfg.output_dir.join(RULE_CSV);
    let mut w = csv_writer(&rule_path)?;
    w.write_record(["row", "treatment", "blip"])?;
    for (i, d) in fitted.training_rule.iter().enumerate() {
        let blip = fitted.training_blip.as_ref().map_or_else(String::new, |b| num(b[i]));
        w.write_record([(i + 1).to_string(), d.to_string(), blip])?;
    }
    flush(w, &rule_path)?;

    let alpha_path = cfg.output_dir.join(ALPHA_CSV);
    let mut w = csv_writer(&alpha_path)?;
    w.write_record(["candidate", "weight", "cv_risk"])?;
    for ((name, weight), risk) in fitted.weights().zip(&fitted.candidate_cv_risks) {
        w.write_record([name.to_string(), num(weight), num(*risk)])?;
    }
    flush(w, &alpha_path)?;

    let n = fitted.training_rule.len();
    let summary = FitSummary {
        n,
        covariates: data.column_names().to_vec(),
        config: config.label(),
        fraction_treated: fitted.training_rule.iter().map(|&d| f64::from(d)).sum::<f64>() / n as f64,
        cv_risk: fitted.cv_risk,
        dropped: fitted.dropped.iter().map(|d| format!("{}: {}", d.name, d.reason)).collect(),
        diagnostics: fitted.diagnostics.clone(),
        imputed: ingested.imputed.clone(),
        scaling: ingested.scaling,
    };
    write_json(&cfg.output_dir.join(FIT_SUMMARY_JSON), &summary)?;
    let artifact = FitArtifact {
        odtr_version: odtr::VERSION.to_string(),
        covariates: data.column_names().to_vec(),
        imputed: ingested.imputed,
        scaling: ingested.scaling,
        fit: fitted,
    };
    write_json(&cfg.output_dir.join(FIT_JSON), &artifact)?;
    Ok(artifact)
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub dgp: Dgp,
    pub rule: String,
    pub eval_n: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub value: f64,
    pub regret_approx: f64,
    pub fraction_treated: f64,
}

pub fn evaluate(cfg: &RunConfigFile) -> Result<MetricsFile> {
    cfg.expect_mode(Mode::Evaluate)?;
    let dgp = cfg.dgp()?;
    let eval_n = cfg.eval_n.unwrap_or(odtr::simulation::EVAL_SAMPLE_SIZE);
    let w = sample_covariates(eval_n, &mut rng::stream(cfg.seed(), rng::EVALUATION, &[]));
    let (label, rule) = match (&cfg.fit_json, cfg.rule) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read fit artifact {}: {e}", path.display())))?;
            let artifact: FitArtifact = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{} is not a fit artifact: {e}", path.display())))?;
            let rule = artifact.fit.predict_rule(&w)?;
            (artifact.fit.config.label(), rule.into_inner())
        }
        (None, Some(reference)) => {
            let rule = match reference {
                ReferenceRule::Optimal => dgp.optimal_rule(&w).into_inner(),
                ReferenceRule::TreatAll => vec![1; eval_n],
                ReferenceRule::TreatNone => vec![0; eval_n],
            };
            let label = serde_json::to_value(reference)?.as_str().unwrap_or_default().to_string();
            (label, rule)
        }
        (Some(_), Some(_)) => return Err(CliError::Config("give either `fit_json` or `rule`, not both".into())),
        (None, None) => return Err(CliError::Config("evaluate needs a fit artifact (`fit_json`) or a `rule`".into())),
    };
    let RuleMetrics { accuracy, value, regret_approx, fraction_treated } = evaluate_rule_metrics(dgp, &w, &rule)?;
    let metrics =
        MetricsFile { dgp, rule: label, eval_n, seed: cfg.seed(), accuracy, value, regret_approx, fraction_treated };
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(METRICS_JSON), &metrics)?;
    Ok(metrics)
}

/// Prints one line per configuration to `out`.
pub fn print_summary(report: &ExperimentReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{:<58} {:>9} {:>9} {:>9}", "method", "accuracy", "regret", "rel.var")?;
    for s in &report.summaries {
        writeln!(
            out,
            "{:<58} {:>9.4} {:>9.4} {:>9}",
            s.method,
            s.mean_accuracy,
            s.mean_regret,
            s.relative_variance.map_or_else(|| "NA".into(), |v| format!("{v:.3}"))
        )?;
    }
    Ok(())
}
