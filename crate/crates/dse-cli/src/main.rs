//! `dse`: command-line front end over the expansion crates.
//!
//! Exit codes: 0 on success, 2 on usage errors (clap's default), 3 on any
//! operational failure, reported as a single `error: <category>: <message>`
//! line on stderr. Every subcommand accepts `--seed`; the `DSE_SEED`
//! environment variable is the fallback when the flag is absent.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod manifest;
mod ops;

#[derive(Parser)]
#[command(name = "dse", version, about = "Dependency syntax expansion toolkit")]
pub struct Cli {
    /// RNG seed; falls back to $DSE_SEED, then the config or 42.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse a CoNLL-U file and report per-sentence statistics.
    Parse {
        file: PathBuf,
        /// Only validate; print the summary line and nothing else.
        #[arg(long)]
        validate_only: bool,
    },
    /// Print each sentence's (dependent, relation, head) triples.
    Expand { file: PathBuf },
    /// Train a model; writes checkpoint, history, and manifest to a run
    /// directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training records (JSONL); overrides `data.train` in the config.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Dev records (JSONL); overrides `data.dev`. Without either, every
        /// tenth training record is held out.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Run directory (default `runs/<timestamp>-<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compute batch gradients across threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Evaluate a checkpoint on a JSONL data file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        parallel: bool,
    },
    /// Train the three input-composition rows across seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data.train` in the config.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Overrides `data.dev`; defaults to a tenth of train.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Overrides `data.test` in the config.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Comma-separated seed list (default: seed, seed+1, seed+2).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run ablation rows across threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Finite-difference checks over every tape op and loss pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Time the tree recursion against the batched expansion encoder.
    Bench {
        /// CoNLL-U file or task JSONL supplying the sentences.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Write the full report as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Multi-threaded mode, reported separately in the artifact.
        #[arg(long)]
        parallel: bool,
    },
    /// Drop near-duplicate records by stem edit distance.
    Dedup {
        /// Cloze JSONL (stems are read from each record) or plain text with
        /// one stem per line.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        threshold: usize,
        /// Surviving lines go here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic task records plus companion CoNLL-U trees.
    Gen {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Output path prefix: writes `<out>.jsonl`, `<out>.conllu`, and
        /// `<out>.manifest.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Cloze,
    Relation,
}

/// Operational failure: one category, one line.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    fn tagged(category: &'static str, message: String) -> Self {
        CliError {
            category,
            message: message.replace('\n', "; "),
        }
    }

    pub fn config(message: String) -> Self {
        Self::tagged("config", message)
    }

    pub fn data(message: String) -> Self {
        Self::tagged("data", message)
    }

    pub fn io(message: String) -> Self {
        Self::tagged("io", message)
    }

    pub fn model(message: String) -> Self {
        Self::tagged("model", message)
    }

    pub fn checkpoint(message: String) -> Self {
        Self::tagged("checkpoint", message)
    }

    pub fn gradcheck(message: String) -> Self {
        Self::tagged("gradcheck", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.category, self.message)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match ops::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
