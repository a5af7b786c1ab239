//! `rblab`: generate controlled multi-feature datasets, train MLPs on
//! them, and run the representation-analysis battery, with reproduction
//! recipes that chain all three.

mod commands;
mod out;
mod recipes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Errors split by exit code: config/schema problems exit 2, runtime
/// failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<rblab_core::Error> for CliError {
    fn from(e: rblab_core::Error) -> Self {
        match e {
            rblab_core::Error::Contract(_) | rblab_core::Error::Json(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "rblab", version, about = "representation-bias laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// Config file (JSON). Commands ship usable defaults where marked.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to $RBLAB_OUT or ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel workers across independent runs (never within a run).
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset (boolean, dyck, or letters) as JSONL files.
    GenData {
        /// dyck | letters | boolean
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one experiment from an experiment config.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the analysis battery over a completed training run directory.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a grid of experiments; results are written per cell as they
    /// finish.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train networks on feature-pair tasks and compare their
    /// representational geometry.
    Rsa {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Steering-vector interventions on a completed training run.
    Intervene {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a named end-to-end reproduction recipe.
    Reproduce {
        /// Recipe name; see `reproduce list`.
        recipe: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { kind, common } => commands::gen_data(&kind, &common),
        Command::Train { common } => commands::train(&common),
        Command::Analyze { common } => commands::analyze(&common),
        Command::Sweep { common } => commands::sweep(&common),
        Command::Rsa { common } => commands::rsa(&common),
        Command::Intervene { common } => commands::intervene(&common),
        Command::Reproduce { recipe, common } => recipes::reproduce(&recipe, &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
