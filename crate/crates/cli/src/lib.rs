//! Library side of the `odtr` command-line tool: configuration, CSV
//! ingestion and the three commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;

pub use commands::{evaluate, fit, simulate, FitArtifact, MetricsFile};
pub use config::{Mode, Overrides, RunConfigFile};
pub use error::{CliError, Result};
