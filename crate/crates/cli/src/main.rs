//! Command-line front end: ingest or generate trial data, train the
//! two-layer yield model, inspect importance and clusters, simulate
//! weather scenarios, and select planting portfolios.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::SolverChoice;

#[derive(Parser)]
#[command(
    name = "agroplan",
    version,
    about = "Crop yield prediction and risk-balanced planting portfolios"
)]
pub struct Cli {
    /// JSON run configuration; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trained model directory (defaults to <out>/model).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Decision model for plan and sweep, overriding the config.
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverChoice>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Read a trial CSV, report data quality, impute, and write a clean copy.
    Ingest,
    /// Generate a synthetic trial dataset with known ground truth.
    Generate,
    /// Train and evaluate the two-layer model; writes the model directory.
    Train,
    /// Permutation importance of the check-yield attributes.
    Importance,
    /// Variety correlation profiles, k-means clusters, and the elbow curve.
    Cluster,
    /// Simulate yield scenarios for the target site.
    Sample,
    /// Select portfolios with the configured decision models.
    Plan,
    /// Sweep each decision model across its parameter list.
    Sweep,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        source: agroplan::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { source, .. } => match source {
                agroplan::Error::InsufficientData(_) => 3,
                agroplan::Error::BudgetExceeded { .. } | agroplan::Error::Infeasible { .. } => 4,
                _ => 2,
            },
        }
    }
}

/// Attach the pipeline stage to a core error so diagnostics name what failed.
pub trait StageExt<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T, CliError>;
}

impl<T> StageExt<T> for agroplan::Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage {
            stage: stage.into(),
            source,
        })
    }
}

impl<T> StageExt<T> for Result<T, std::io::Error> {
    fn stage(self, stage: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|e| CliError::Stage {
            stage: stage.into(),
            source: agroplan::Error::from(e),
        })
    }
}

impl<T> StageExt<T> for Result<T, serde_json::Error> {
    fn stage(self, stage: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|e| CliError::Stage {
            stage: stage.into(),
            source: agroplan::Error::from(e),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolved = config::resolve(&cli)?;
    commands::prepare_output(&resolved)?;
    match cli.command {
        Command::Ingest => commands::ingest(&resolved),
        Command::Generate => commands::generate(&resolved),
        Command::Train => commands::train(&resolved),
        Command::Importance => commands::importance(&resolved),
        Command::Cluster => commands::cluster(&resolved),
        Command::Sample => commands::sample(&resolved),
        Command::Plan => commands::plan(&resolved),
        Command::Sweep => commands::sweep(&resolved),
    }
}
