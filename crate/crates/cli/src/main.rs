//! `adatrans` command-line driver.
//!
//! Configuration precedence, highest first: dedicated flags such as
//! `--seed` or `--theta`, then `--set key=value` overrides, then the file
//! given by `--config`, then the file named by `ADATRANS_CONFIG`, then the
//! `config.txt` saved beside a checkpoint, then built-in defaults.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const CONFIG_ENV: &str = "ADATRANS_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] adatrans::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("I/O error on {}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(adatrans::Error::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "adatrans", version, about = "Boundary-guided shrinking for speech translation on synthetic corpora")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth {
        /// Corpus spec file; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage.
    Train {
        /// asr_pretrain, mt_pretrain, st_finetune or single_stage.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pretrained checkpoints as `asr=<file>` and `mt=<file>`.
        #[arg(long, num_args = 1..)]
        init: Vec<String>,
        /// Continue from `state.adts` in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and write the report CSVs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        theta: Option<f64>,
        /// Segment with the gold boundaries.
        #[arg(long)]
        oracle_boundaries: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Decode over a threshold grid and histogram boundary probabilities.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// `start:stop:step` or a comma list.
        #[arg(long, default_value = "0.1:0.9:0.1")]
        grid: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Time the semantic stage of several shrinkers.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma list; "none" is always added.
        #[arg(long, value_delimiter = ',', default_value = "none,fixed,ctc_greedy,boundary")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long)]
        fixed_steps: Option<usize>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-frame posteriors and boundaries of one utterance.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        theta: Option<f64>,
        /// Also write `inspect.csv` and a manifest here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
