//! `rdwt`: data generation, wavelet decomposition, training, evaluation,
//! gradient checks and latency benchmarks.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdwt_core::Error;

#[derive(Parser)]
#[command(name = "rdwt", version, about = "Trainable rationally-dilated wavelet front end for EEG classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic motor-imagery-like trial set.
    Gen(GenArgs),
    /// Split every trial into wavelet subbands and a reconstruction.
    Decompose(DecomposeArgs),
    /// Train a model and report held-out accuracy.
    Train(TrainArgs),
    /// Score a checkpoint on a trial set.
    Eval(EvalArgs),
    /// Finite-difference gradient check of every parameter group.
    Gradcheck(GradcheckArgs),
    /// Per-stage forward latency.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub subjects: u32,
    #[arg(long, default_value_t = 100)]
    pub trials_per_class: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 250.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also export the trials as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct DecomposeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Flat key=value config; only the `rdwt.*` keys are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated per-level scales (default: the configured anchors).
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Comma-separated per-level soft thresholds (default: softplus(theta_init)).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    SubDep,
    Loso,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "sub-dep")]
    pub protocol: ProtocolArg,
    #[arg(long)]
    pub held_out: Option<u32>,
    /// Flat key=value config (default: the tiny preset).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// History CSV (default: `<out-ckpt>.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Score only the test part of this protocol; omit to score every trial.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub held_out: Option<u32>,
    /// Split seed (default: the checkpoint's training seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Flat key=value config (default: tiny preset, hybrid front end, two branches).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    /// Entries probed per tensor.
    #[arg(long, default_value_t = 12)]
    pub entries: usize,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Flat key=value config (default: the tiny preset).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub repeat: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failed run: either a library error or a check that did not pass.
pub enum Failure {
    Lib(Error),
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Dimension(_) | Error::Io(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
    }
}
