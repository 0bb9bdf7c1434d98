//! `unlearn`: build, screen, contrast and attack unlearned models from the
//! command line, run the canned experiments, or serve the HTTP API.

mod commands;
mod config;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use unlearn_core::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(_) | Error::Partition(_) | Error::NotFound { .. } | Error::Duplicate(_) | Error::Format { .. } => {
                Failure::usage(e.to_string())
            }
            _ => Failure::runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "unlearn", version, about = "Machine-unlearning comparison workbench")]
pub struct Cli {
    /// Registry directory. UNLEARN_DATA_DIR takes precedence when set.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    /// Build worker threads (default: CPU cores minus one).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Run-config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct WorkspaceArgs {
    /// Existing workspace id. Without it the workspace comes from the config
    /// file, or the default blob workspace.
    #[arg(long, short = 'w')]
    pub workspace: Option<String>,

    /// Overrides the forget class of the configured workspace.
    #[arg(long)]
    pub forget_class: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build unlearned models from a hyperparameter grid.
    Build {
        #[command(flatten)]
        ws: WorkspaceArgs,
        #[arg(long)]
        method: Option<String>,
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        lr: Vec<f64>,
        #[arg(long = "batch", value_delimiter = ',')]
        batch: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Model to unlearn from.
        #[arg(long)]
        base: Option<String>,
        /// Method parameter as name=value; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, f64)>,
    },
    /// Table of the workspace's models.
    Screen {
        #[command(flatten)]
        ws: WorkspaceArgs,
        /// Sort key (id, ua, ra, tua, tra, rt, wcps, created); prefix `-` for descending.
        #[arg(long, allow_hyphen_values = true)]
        sort: Option<String>,
        /// Only models of this method (or original, retrained, uploaded).
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Full comparison report of two models.
    Contrast {
        #[command(flatten)]
        ws: WorkspaceArgs,
        a: String,
        b: String,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold sweep of one attack as CSV.
    Attack {
        #[command(flatten)]
        ws: WorkspaceArgs,
        model: String,
        /// confidence or entropy
        #[arg(long, default_value = "confidence")]
        stat: String,
        /// geq or leq
        #[arg(long, default_value = "geq")]
        dir: String,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a canned experiment and write <name>.json and <name>.csv.
    Experiment {
        /// ft-progression, method-shootout or gu-ablation
        name: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// List stored workspaces.
    Workspaces,
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
