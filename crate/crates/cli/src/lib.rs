//! Command-line front end: synthetic data generation, training, ensemble
//! sampling and evaluation.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use downscaler_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    /// Classifies a library error by exit code.
    pub fn from_core(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }

    pub fn context(self, what: &str) -> Self {
        Self {
            message: format!("{what}: {}", self.message),
            ..self
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::from_core(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Cvae,
    Baseline,
}

#[derive(Debug, Parser)]
#[command(name = "downscaler", version, about = "Stochastic precipitation downscaling experiment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic predictor/predictand dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training slice of a dataset.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss table; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Draw an ensemble for every test day.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(short = 'n', long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write greyscale maps of one test day here.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
        /// Test day for the maps, counted from the start of the test slice.
        #[arg(long, default_value_t = 0)]
        pgm_day: usize,
    },
    /// Compare two sample files against the dataset's test slice.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cvae: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Runs one command; returns the text to print on success.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::GenData { config, out } => commands::gen_data(config.as_deref(), out),
        Command::Train {
            model,
            data,
            config,
            out,
            loss_csv,
        } => commands::train(*model, data, config.as_deref(), out, loss_csv.as_deref()),
        Command::Sample {
            checkpoint,
            data,
            n,
            seed,
            out,
            pgm_dir,
            pgm_day,
        } => commands::sample(checkpoint, data, *n, *seed, out, pgm_dir.as_deref(), *pgm_day),
        Command::Evaluate {
            data,
            cvae,
            baseline,
            out,
            config,
        } => commands::evaluate(data, cvae, baseline, out, config.as_deref()),
    }
}

/// Reads `DOWNSCALER_THREADS`; `None` means use every core.
pub fn thread_limit(raw: Option<&str>) -> Result<Option<usize>, CliError> {
    match raw {
        None => Ok(None),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::config(format!("DOWNSCALER_THREADS must be a positive integer, got {s:?}"))),
        },
    }
}
