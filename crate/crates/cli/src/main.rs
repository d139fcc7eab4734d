//! `tmsynth`: run machines, RLCT experiments, shift-machine geometry scans
//! and free-energy phase scans.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Version string embedded in every output.
pub const VERSION: &str = env!("TMSYNTH_BUILD_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Runtime(#[from] tmsynth::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(tmsynth::Error::Parse { .. }) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tmsynth", version = VERSION, about = "Program synthesis as singular learning")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Maximum number of concurrent chains.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Validate the config and print the work plan without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a machine classically, or its code through the smooth UTM.
    Simulate(commands::SimulateArgs),
    /// Estimate the RLCT of a synthesis problem.
    Rlct,
    /// Rasterize a shift-machine KL surface and extract its zero set.
    Geometry(commands::GeometryArgs),
    /// Scan free-energy curves of candidate machines for crossings.
    Phases,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Rlct => commands::rlct(&cli.common),
        Command::Geometry(args) => commands::geometry(&cli.common, args),
        Command::Phases => commands::phases(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
