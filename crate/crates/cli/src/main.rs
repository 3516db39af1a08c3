//! `sevastyanov` command-line tool: simulation, solving, genealogies,
//! validation and format conversion driven by one JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Method;

pub const ENV_OUT: &str = "SEVASTYANOV_OUT";
pub const ENV_THREADS: &str = "SEVASTYANOV_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Library(#[from] sevastyanov::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} of {1} checks failed")]
    Validation(usize, usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use sevastyanov::Error as E;
        match self {
            CliError::Config(_) | CliError::Parse(_) => 1,
            CliError::Library(
                E::Config(_)
                | E::InvalidKernel(_)
                | E::ZeroTotalRate
                | E::DefectiveLength
                | E::DensityMissing
                | E::Parse(_)
                | E::Json(_),
            ) => 1,
            CliError::Library(_) | CliError::Io(_) => 2,
            CliError::Validation(..) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sevastyanov", version, about = "Branching trees, Sevast'yanov processes and genealogies of extant branches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a batch of trees and their process paths.
    Simulate(Common),
    /// Solve the extinction and generating-function tables.
    Solve(Common),
    /// Sample genealogies of the branches extant at the horizon.
    Genealogy {
        #[command(flatten)]
        common: Common,
        /// Overrides the config method.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Run the validation suite.
    Validate(Common),
    /// Convert a binary table to CSV or tree/genealogy JSON to Newick.
    Export {
        #[command(flatten)]
        common: Common,
        /// File to convert.
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&commands::Context::new(&c)?),
        Command::Solve(c) => commands::solve(&commands::Context::new(&c)?),
        Command::Genealogy { common, method } => commands::genealogy(&commands::Context::new(&common)?, method),
        Command::Validate(c) => commands::validate(&commands::Context::new(&c)?),
        Command::Export { common, input } => commands::export(&commands::Context::new(&common)?, &input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sevastyanov: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
