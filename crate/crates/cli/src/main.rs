mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::CliError;

#[derive(Parser, Debug)]
#[command(name = "memlab", version, about = "Random-label memorization experiments on toy data")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Override a configuration key, e.g. `--set optimizer.learning_rate=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DataFormat {
    Csv,
    Binary,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the training and held-out datasets of a run configuration.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DataFormat::Csv)]
        format: DataFormat,
    },
    /// Train one model and write its run record and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Probe every layer of a checkpoint on a dataset.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fit set (clean and random labels).
        #[arg(long)]
        data: PathBuf,
        /// Evaluation set for clean probing.
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a parameter sweep described by a sweep configuration.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Replace the configured seeds with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the capacity phase grid.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Replace the configured seeds with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decompose the augmented loss of a checkpoint on a dataset.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the identity, gradient and K-NN property suites.
    Check {
        /// Optional directory for a JSON report.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Result type of every subcommand.
type CliResult = Result<(), CliError>;
