//! `tmav` command-line front end.

mod error;
mod metrics;
mod predict;
mod train;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tmav", version, about = "Temporal motionless video analysis toolkit")]
struct Cli {
    /// Log verbosity (`RUST_LOG` takes precedence).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate per-frame score distributions into window verdicts.
    #[command(alias = "predict-stream")]
    Predict(predict::PredictArgs),
    /// Run the offline/online training loop against a backend.
    Train(train::TrainArgs),
    /// Energy consumption per training image and model selection.
    Ecti(metrics::EctiArgs),
    /// Thermal deviation and lifespan reduction factors.
    Thermal(metrics::ThermalArgs),
    /// Frames until a constant-score chain collapses below epsilon.
    Horizon(metrics::HorizonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

/// `--input` / `--output` shared by every subcommand; `-` means stdio.
#[derive(Debug, Clone, Args)]
struct IoArgs {
    #[arg(long, env = "TMAV_INPUT", default_value = "-")]
    input: PathBuf,
    #[arg(long, env = "TMAV_OUTPUT", default_value = "-")]
    output: PathBuf,
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>, CliError> {
    if is_stdio(path) {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Ok(Box::new(BufReader::new(file)))
    }
}

fn open_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn open_output(path: &Path) -> Result<Box<dyn Write>, CliError> {
    if is_stdio(path) {
        Ok(Box::new(BufWriter::new(io::stdout())))
    } else {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Box::new(BufWriter::new(file)))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Predict(args) => predict::run(args),
        Command::Train(args) => train::run(args),
        Command::Ecti(args) => metrics::run_ecti(args),
        Command::Thermal(args) => metrics::run_thermal(args),
        Command::Horizon(args) => metrics::run_horizon(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("tmav: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
