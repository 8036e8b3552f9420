//! Command-line workflow: synthesize data, train, drive, evaluate.
//!
//! Settings come from a TOML config (see [`AppConfig`]); command-line flags
//! override the matching config keys, and anything neither sets keeps the
//! library default. Exit codes: 0 success, 1 usage, 2 validation or data
//! integrity failure, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::AppConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Shown by `--version`. The checkpoint number must track
/// `pilotstack::nn::checkpoint::FORMAT_VERSION` (checked in tests).
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (checkpoint format 1)");

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pilotstack::Error),

    #[error(transparent)]
    Teleop(#[from] pilotstack_teleop::TeleopError),

    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    /// A check the command itself performs failed (details already printed).
    #[error("{0}")]
    Failed(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use pilotstack_teleop::TeleopError;
        match self {
            CliError::Core(e) | CliError::Teleop(TeleopError::Sim(e)) => {
                if e.is_validation() {
                    EXIT_VALIDATION
                } else {
                    EXIT_RUNTIME
                }
            }
            CliError::Config { .. } | CliError::Failed(_) => EXIT_VALIDATION,
            CliError::Teleop(_) | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pilotstack", version = VERSION, about = "Behavior-cloning autopilot workflow for a simulated mini car")]
pub struct Cli {
    /// TOML config file. Keys it omits keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the config and check the body against FIRA size limits.
    Check,
    /// Record expert driving into a new session directory.
    Synth(SynthArgs),
    /// Train the pilot network on one or more sessions.
    Train(TrainArgs),
    /// Drive laps with a trained model and write traces.
    Autopilot(AutopilotArgs),
    /// Score a trace, or drive and score a model.
    Eval(EvalArgs),
    /// Inspect recorded data.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Serve the teleoperation UI and simulator.
    Drive(DriveArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Overrides `synth.n_samples`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Overrides `synth.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `synth.noise_level`.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Session directories (or parents of sessions), comma separated.
    #[arg(long, required = true, value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    /// Checkpoint path. The loss history goes next to it with a `.csv`
    /// extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    /// Episodes start evenly spaced along the track.
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    /// Per-episode time limit in simulated seconds.
    #[arg(long, default_value_t = 60.0)]
    pub max_seconds: f64,
    /// Overrides `pilot.throttle_scale`.
    #[arg(long)]
    pub throttle_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AutopilotArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trace path. With several episodes, episode k goes to `<stem>-<k>.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Print the JSON report only.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Record count, label histograms and an integrity check.
    Stats {
        #[arg(long, required = true, value_delimiter = ',')]
        data: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct DriveArgs {
    /// Start in autopilot mode with this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8887")]
    pub bind: String,
    /// Recording sessions are created here.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
}

/// Runs one parsed invocation, writing reports to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = AppConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Check => commands::check(&cfg, out),
        Command::Synth(a) => commands::synth(cfg, &a, out),
        Command::Train(a) => commands::train(cfg, &a, out),
        Command::Autopilot(a) => commands::autopilot(cfg, &a, out),
        Command::Eval(a) => commands::eval(cfg, &a, out),
        Command::Dataset(DatasetCommand::Stats { data, json }) => commands::dataset_stats(&data, json, out),
        Command::Drive(a) => commands::drive(cfg, &a, out),
    }
}

/// `model.acpm` -> `model.csv`.
pub fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("csv")
}

/// Trace file for episode `k` of `n`.
pub fn trace_path(out: &Path, k: usize, n: usize) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "jsonl".into());
    out.with_file_name(format!("{stem}-{k}.{ext}"))
}
