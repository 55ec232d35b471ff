//! `ddpae`: generate datasets, train, evaluate and inspect models.

mod commands;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use ddpae::datasets::MnistSplit;
use ddpae::training::PROFILES;

#[derive(Debug, Parser)]
#[command(name = "ddpae", version, about = "Video prediction by decomposition into components with disentangled content and pose")]
pub struct Cli {
    /// Dataset root holding the MNIST image files.
    #[arg(long, global = true, env = "DDPAE_DATA_DIR", value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Print the artifacts a command would write, then exit without writing.
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a fixed set of sequences with object tracks.
    GenerateData(GenerateArgs),
    /// Train a model, writing checkpoints and a metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a fixed set.
    Evaluate(EvaluateArgs),
    /// Render inputs, predictions and components of one sequence.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn mnist(self) -> MnistSplit {
        match self {
            Split::Train => MnistSplit::Train,
            Split::Test => MnistSplit::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(PROFILES))]
    pub profile: String,
    /// Number of sequences.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// MNIST digit source; ignored for ball data.
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["config", "profile"]))]
pub struct TrainArgs {
    /// JSON training configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Named configuration.
    #[arg(long, value_parser = PossibleValuesParser::new(PROFILES))]
    pub profile: Option<String>,
    /// Override the iteration count.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Override the number of components.
    #[arg(long)]
    pub components: Option<usize>,
    /// Train with independent per-component prediction.
    #[arg(long)]
    pub ablate_dependency: bool,
    /// Train on a fixed set instead of fresh clips.
    #[arg(long, value_name = "FILE")]
    pub train_set: Option<PathBuf>,
    /// Run directory; defaults to `runs/<profile>`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint (default: the latest one in the run directory).
    #[arg(long, value_name = "CKPT", num_args = 0..=1)]
    pub resume: Option<Option<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory or run directory.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Fixed set written by `generate-data`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Configuration the checkpoint must match.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Sample latents with this noise seed instead of using posterior means.
    #[arg(long, value_name = "SEED", num_args = 0..=1, default_missing_value = "0")]
    pub stochastic: Option<u64>,
    /// Predict every component independently.
    #[arg(long)]
    pub ablate_dependency: bool,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Sequence to render.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_name = "SEED", num_args = 0..=1, default_missing_value = "0")]
    pub stochastic: Option<u64>,
    #[arg(long)]
    pub ablate_dependency: bool,
    /// Pixel magnification of the rendered frames.
    #[arg(long, default_value_t = 2)]
    pub scale: u32,
    /// Also write an animated GIF.
    #[arg(long)]
    pub gif: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// 2 usage/configuration, 3 data or I/O, 4 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ddpae::Error>() {
        Some(ddpae::Error::Config(_)) => 2,
        Some(ddpae::Error::NonFinite { .. }) | Some(ddpae::Error::Tensor(_)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = exit_code(&e);
            if code == 2 {
                eprintln!("see `ddpae --help` for usage");
            }
            ExitCode::from(code)
        }
    }
}
