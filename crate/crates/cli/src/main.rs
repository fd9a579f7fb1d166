//! `forecast-audit`: drives the audit pipeline from a TOML run configuration.
//!
//! Stages run in order — simulate, prompts, query, estimate / calibrate,
//! report — and each is idempotent: re-running a stage on unchanged inputs
//! rewrites identical bytes. Failures exit with a class-specific code so
//! shell harnesses can tell a bad config from a dead endpoint:
//!
//! | code | class |
//! |------|-------|
//! | 0    | success |
//! | 2    | configuration (bad TOML, invalid values, backend/schema mismatch) |
//! | 3    | data (missing or unparseable files, absent QueryRecords, cache damage) |
//! | 4    | network (transport failures, rejected credentials) |
//! | 5    | estimation (rank-deficient designs, empty samples, non-convergence) |

mod analysis;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use forecast_audit::Error;

use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "forecast-audit",
    about = "Prompt-to-report audit pipeline for return forecasters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or normalize) the run's input data into the output directory.
    Simulate(StageArgs),
    /// Build every prompt bundle and write them under `prompts/`.
    Prompts(StageArgs),
    /// Answer every prompt, filling the QueryRecord store under `records/`.
    Query(StageArgs),
    /// Run the enabled estimators and write tables under `tables/`.
    Estimate(StageArgs),
    /// Score distribution forecasts against history; writes `calibration/`.
    Calibrate(StageArgs),
    /// Assemble `report.md` from the stored records (no network).
    Report(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Run-configuration TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the lag depth (12 or 24 weeks).
    #[arg(long)]
    lags: Option<usize>,
    /// Override the forecaster backend by wire id.
    #[arg(long)]
    backend: Option<String>,
    /// Override the maximum number of in-flight queries.
    #[arg(long)]
    max_parallel: Option<usize>,
}

impl StageArgs {
    fn load(&self) -> forecast_audit::Result<RunConfig> {
        let overrides = Overrides {
            out: self.out.clone(),
            seed: self.seed,
            lags: self.lags,
            backend: self.backend.clone(),
            max_parallel: self.max_parallel,
        };
        RunConfig::load(&self.config, &overrides)
    }
}

/// Maps error classes to stable process exit codes.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::Anonymization(_) | Error::UnsupportedSchema { .. } => 2,
        Error::Parse { .. }
        | Error::InvalidData(_)
        | Error::Io { .. }
        | Error::CacheCorrupt { .. }
        | Error::Response(_) => 3,
        Error::Transport { .. } | Error::Auth(_) => 4,
        Error::RankDeficient { .. } | Error::Estimation(_) => 5,
    }
}

fn run(command: &Command) -> forecast_audit::Result<()> {
    match command {
        Command::Simulate(args) => pipeline::cmd_simulate(&args.load()?),
        Command::Prompts(args) => pipeline::cmd_prompts(&args.load()?),
        Command::Query(args) => pipeline::cmd_query(&args.load()?),
        Command::Estimate(args) => analysis::cmd_estimate(&args.load()?),
        Command::Calibrate(args) => analysis::cmd_calibrate(&args.load()?),
        Command::Report(args) => analysis::cmd_report(&args.load()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
