//! `mfrn`: synthesis, training, evaluation, sweeps and overlays from one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfrn::Error;

#[derive(Parser, Debug)]
#[command(name = "mfrn", version, about = "Blending-artifact face forgery detector toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// TOML file layered over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `key.path=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sample synthesis (same as `--set workers=N`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Inspect the resolved configuration.
    #[command(subcommand)]
    Config(ConfigCommand),
    /// Write a procedural video corpus with sidecar detections and a split file.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect faces in a frame tree and write a manifest CSV.
    Manifest {
        #[arg(long)]
        root: PathBuf,
        /// JSON file with `train`, `val` and `test` video id lists.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only this many evenly sampled frames per video.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Write RBI sample shards from genuine faces.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        input: FaceInput,
        #[arg(long, default_value_t = 256)]
        shard_size: usize,
    },
    /// Train the detector; writes a log and per-epoch checkpoints.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        input: FaceInput,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Accept a checkpoint written under a different config.
        #[arg(long)]
        force: bool,
        /// SAM radius (same as `--set train.rho=X`).
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Score a manifest split and write AUC reports.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Frame root of the manifest; defaults to its directory.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Parent of the run directory.
        #[arg(long)]
        out: PathBuf,
        /// `frame` or `video` (same as `--set eval.protocol=...`).
        #[arg(long)]
        protocol: Option<String>,
        /// Frames per video (same as `--set eval.frames=N`).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and score one model per loss-weight cell on procedural faces.
    Sweep {
        /// Parent of the run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write prediction panels.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        input: FaceInput,
        /// At most this many faces.
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum ConfigCommand {
    /// Print every key with its value and origin note.
    Show,
}

/// Faces from a manifest, or procedural ones.
#[derive(Args, Debug, Clone)]
pub struct FaceInput {
    #[arg(long, conflicts_with = "toy")]
    pub manifest: Option<PathBuf>,
    /// Frame root of the manifest; defaults to its directory.
    #[arg(long, requires = "manifest")]
    pub root: Option<PathBuf>,
    /// Use this many procedural faces instead of a manifest.
    #[arg(long)]
    pub toy: Option<usize>,
}

/// How a command that did not fail ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Outputs were written but some units failed.
    Partial,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_PARTIAL: u8 = 5;

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Param(_) | Error::Shape(_) => EXIT_CONFIG,
        Error::Data(_)
        | Error::NoFace(_)
        | Error::Adapter { .. }
        | Error::Checkpoint(_)
        | Error::UndefinedMetric(_)
        | Error::Io { .. }
        | Error::Image(_) => EXIT_DATA,
        Error::Numeric(_) | Error::Tensor(_) => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
