//! Command-line front door for the sensing toolkit: synthetic scenario
//! generation, preprocessing, standalone ECG analysis, model training and
//! evaluation, and the rate and duration sweeps.
//!
//! Every command that takes `--seed` is fully reproducible: rerunning it
//! with the same seed and config writes byte-identical files. Exit codes
//! are 0 for success, 1 when a pipeline ran but produced an unusable
//! result (for example diverged training), and 2 for input errors.

mod commands;
mod config;
mod data;
mod svg;
mod tables;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Failures split by who has to act: fix the invocation (2) or accept that
/// the computation itself went bad (1).
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Quality(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Quality(m) => write!(f, "{m}"),
        }
    }
}

impl From<wisp_core::CoreError> for CliError {
    fn from(e: wisp_core::CoreError) -> Self {
        use wisp_core::CoreError;
        use wisp_nn::NnError;
        match &e {
            CoreError::Numeric(_) => CliError::Quality(e.to_string()),
            CoreError::Nn(NnError::State(_)) => CliError::Quality(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<wisp_nn::NnError> for CliError {
    fn from(e: wisp_nn::NnError) -> Self {
        CliError::from(wisp_core::CoreError::from(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "wisp",
    version,
    about = "WiFi sensing harness: synthesize data, train models, run sweeps"
)]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON experiment config; missing fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: CSI, ECG, labels, manifest.
    Synth(commands::synth::SynthArgs),
    /// Turn a CSI recording into the network's feature matrix.
    Preprocess(commands::preprocess::PreprocessArgs),
    /// Detect QRS complexes in an ECG file.
    Qrs(EcgInput),
    /// Compute a cardiopulmonary coupling map from an ECG file.
    Cpc(EcgInput),
    /// Train a model on scenario manifests.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on scenario manifests.
    Eval(commands::eval::EvalArgs),
    /// Train one model per sampling rate and chart validation error.
    SweepRate(commands::sweep::SweepArgs),
    /// Train one model per window duration and chart validation error.
    SweepDuration(commands::sweep::SweepArgs),
}

/// Shared argument set for the two standalone ECG commands.
#[derive(Args)]
pub struct EcgInput {
    /// ECG CSV file (`# rate=<Hz>` header, then `index,mv` rows).
    #[arg(long)]
    input: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Quality(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = config::load(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    if cli.print_config {
        println!("{}", config::render(&cfg)?);
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::Input(
            "no subcommand given; run with --help for usage".into(),
        )),
        Some(Command::Synth(args)) => commands::synth::run(&args, &cfg),
        Some(Command::Preprocess(args)) => commands::preprocess::run(&args, &cfg),
        Some(Command::Qrs(args)) => commands::qrs::run(&args, &cfg),
        Some(Command::Cpc(args)) => commands::cpc::run(&args, &cfg),
        Some(Command::Train(args)) => commands::train::run(&args, &cfg),
        Some(Command::Eval(args)) => commands::eval::run(&args, &cfg),
        Some(Command::SweepRate(args)) => commands::sweep::run_rate(&args, &cfg),
        Some(Command::SweepDuration(args)) => commands::sweep::run_duration(&args, &cfg),
    }
}
