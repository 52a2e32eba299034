//! `mfpca`: preprocessing, fitting, simulation, bootstrap and regression
//! from the command line.

mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Settings;
use error::CliError;
use output::OutDir;

#[derive(Parser)]
#[command(name = "mfpca", version, about = "Multilevel functional principal component analysis")]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for all outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Flat JSON file with option defaults, keyed by flag name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Windowed band power of raw signals.
    Preprocess(commands::preprocess::Args),
    /// Decompose a sample and estimate scores.
    Fit(commands::fit::Args),
    /// Score RMSE over simulated replicates.
    Simulate(commands::simulate::Args),
    /// Parametric bootstrap interval for the subject-level variance share.
    Bootstrap(commands::bootstrap::Args),
    /// Logistic regression of an outcome on subject-level scores.
    Regress(commands::regress::Args),
}

pub struct Context {
    pub settings: Settings,
    pub seed: u64,
    pub out: OutDir,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.get("seed", cli.seed, 0u64)?;
    let threads: Option<usize> = settings.opt("threads", cli.threads)?;
    let out_dir: PathBuf = settings.get("out-dir", cli.out_dir, PathBuf::from("."))?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    let prepare = |settings: Settings| -> Result<Context, CliError> { Ok(Context { settings, seed, out: OutDir::create(&out_dir)? }) };
    match cli.command {
        Command::Preprocess(a) => commands::preprocess::run(a, settings, prepare),
        Command::Fit(a) => commands::fit::run(a, settings, prepare),
        Command::Simulate(a) => commands::simulate::run(a, settings, prepare),
        Command::Bootstrap(a) => commands::bootstrap::run(a, settings, prepare),
        Command::Regress(a) => commands::regress::run(a, settings, prepare),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
