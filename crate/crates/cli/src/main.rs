//! `tdcnn`: drive the convolutional text sequence autoencoder from the
//! command line.
//!
//! One flat `key = value` config file describes a run; `--set key=value`
//! flags override individual keys. Exit codes: 0 ok, 2 config error, 3 data
//! error, 4 checkpoint mismatch.

mod config;
mod corrupt;
mod error;
mod eval;
mod files;
mod gradcheck;
mod infer;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::infer::ModelFlags;

#[derive(Parser)]
#[command(name = "tdcnn", version, about = "Convolutional text sequence autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (`key = value` lines, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Args)]
struct CheckpointArgs {
    /// Checkpoint file, or a directory holding checkpoint-NNNNNN.ckpt files
    /// (default: latest under the config outdir).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary file (default: vocab.txt next to the checkpoint).
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl CheckpointArgs {
    fn flags(&self) -> ModelFlags<'_> {
        ModelFlags { checkpoint: self.checkpoint.as_deref(), vocab: self.vocab.as_deref() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured task, resuming from the outdir when it already
    /// holds checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Apply the configured noise to a text file.
    Corrupt {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run noisy text through a trained model (denoising correction).
    Correct {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        input: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Encode and decode text through a trained model.
    Reconstruct {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        input: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Predict class labels with a trained classifier head.
    Classify {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
        /// Labeled or unlabeled TSV; labels, when present, drive the
        /// printed accuracy cross-check.
        #[arg(long)]
        input: PathBuf,
        /// Prediction file, one label per line.
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate one title per input abstract with a trained summarizer head.
    Summarize {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        input: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a hypothesis file against a reference file (ScoreReport CSV).
    Eval {
        /// One of: all, bleu, rouge1, rouge2, rougel, cer, wer.
        #[arg(long, default_value = "all")]
        metric: String,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients of the configured architecture against
    /// central differences on a synthetic batch.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config } => train::run(&config.load()?),
        Command::Corrupt { config, input, output } => corrupt::run(&config.load()?, &input, &output),
        Command::Correct { config, ckpt, input, output } => {
            infer::reconstruct(&config.load()?, &ckpt.flags(), &input, output.as_deref())
        }
        Command::Reconstruct { config, ckpt, input, output } => {
            infer::reconstruct(&config.load()?, &ckpt.flags(), &input, output.as_deref())
        }
        Command::Classify { config, ckpt, input, output } => {
            infer::classify(&config.load()?, &ckpt.flags(), &input, &output)
        }
        Command::Summarize { config, ckpt, input, output } => {
            infer::summarize(&config.load()?, &ckpt.flags(), &input, output.as_deref())
        }
        Command::Eval { metric, hyp, reference, out } => {
            eval::run(&metric, &hyp, &reference, out.as_deref())
        }
        Command::Gradcheck { config, tolerance } => gradcheck::run(&config.load()?, tolerance),
    }
}

fn main() -> ExitCode {
    // die quietly when stdout closes early (say, piped into head)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
