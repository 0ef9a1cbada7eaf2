use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odtr_cli::commands::print_summary;
use odtr_cli::{evaluate, fit, simulate, CliError, Overrides, RunConfigFile};

/// Optimal dynamic treatment rules by SuperLearner.
#[derive(Debug, Parser)]
#[command(name = "odtr", version)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation study on one of the two simulated processes.
    Simulate(CommonArgs),
    /// Fit an ensemble rule to a CSV file.
    Fit(CommonArgs),
    /// Score a fitted or reference rule against a simulated process.
    Evaluate(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Use the full replication count.
    #[arg(long)]
    full_scale: bool,
    /// Use a short replication count that only checks orderings.
    #[arg(long)]
    smoke: bool,
    /// Negate Y at ingestion, for outcomes where smaller is better.
    #[arg(long)]
    negate_y: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfigFile, CliError> {
        let overrides =
            Overrides { full_scale: self.full_scale, smoke: self.smoke, negate_y: self.negate_y, seed: None }
                .with_env_seed()?;
        Ok(RunConfigFile::load(&self.config)?.apply(overrides))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {k} threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => {
            let out = simulate(&args.load()?)?;
            print_summary(&out.report, &mut std::io::stdout().lock()).map_err(CliError::io("<stdout>"))?;
            println!("wrote {}", out.output_dir.display());
        }
        Command::Fit(args) => {
            let cfg = args.load()?;
            let artifact = fit(&cfg)?;
            let f = &artifact.fit;
            let treated = f.training_rule.iter().filter(|&&d| d == 1).count();
            println!("{}: treating {treated} of {} rows", f.config.label(), f.training_rule.len());
            for (name, w) in f.weights().filter(|(_, w)| *w > 0.0) {
                println!("  {name:<24} {w:.4}");
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Evaluate(args) => {
            let m = evaluate(&args.load()?)?;
            println!("accuracy {:.4}  value {:.4}  regret {:.4}", m.accuracy, m.value, m.regret_approx);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
