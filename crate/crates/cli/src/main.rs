//! `modelsel`: tune ε, run experiments, generate synthetic collections,
//! serve labeling sessions and turn reports into plot data.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "modelsel", version, about = "Label-efficient selection of pretrained classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Choose ε from model predictions alone.
    Tune(Common),
    /// Run the realization protocol and write metrics.
    Run(Common),
    /// Generate a synthetic collection.
    Synth(Common),
    /// Serve interactive labeling sessions over HTTP.
    Serve(Common),
    /// Export plot data from a metrics report or replay a session transcript.
    Report(Common),
}

/// Flags shared by every command. Each overrides the config key of the same
/// name (`--seed` overrides the master seed).
#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<modelsel_core::Error> for CliError {
    fn from(e: modelsel_core::Error) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tune(c) => commands::tune(&c),
        Command::Run(c) => commands::run(&c),
        Command::Synth(c) => commands::synth(&c),
        Command::Serve(c) => commands::serve(&c),
        Command::Report(c) => commands::report(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
