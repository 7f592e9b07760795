//! `selfsync` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 malformed config or
//! scenario, 3 no synchronization within the horizon.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "selfsync", version, about = "Delayed derivative-consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Simulate,
    Predict,
    Unbias2,
    #[value(name = "gamma_protocol", alias = "gamma-protocol")]
    GammaProtocol,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Predict => "predict",
            Mode::Unbias2 => "unbias2",
            Mode::GammaProtocol => "gamma_protocol",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Passes {
    Simulate,
    Predict,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario files from a TOML config.
    Gen {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate, predict or run a bias-removal protocol on a scenario.
    Run(RunArgs),
    /// Repeated estimation trials on random Rayleigh networks.
    Montecarlo {
        /// TOML config; defaults are used when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print connectivity class, gamma and rate bounds of a scenario.
    Inspect { scenario: PathBuf },
}

#[derive(clap::Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "simulate")]
    pub mode: Mode,
    /// How protocol passes are evaluated.
    #[arg(long, value_enum, default_value = "simulate")]
    pub passes: Passes,
    /// Override the noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Relative synchronization tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Detection window in samples.
    #[arg(long)]
    pub window: Option<usize>,
    /// Keep every n-th sample in the trace.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out_dir, seed } => commands::gen(&config, &out_dir, seed),
        Command::Run(args) => commands::run(&args),
        Command::Montecarlo {
            config,
            trials,
            seed,
            horizon,
            out_dir,
        } => commands::montecarlo(config.as_deref(), trials, seed, horizon, &out_dir),
        Command::Inspect { scenario } => commands::inspect(&scenario),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
