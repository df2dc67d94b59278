//! `vibed`: train, evaluate and run the dual-stream engagement classifier
//! on precomputed feature datasets.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vibed_core::{Pooling, Variant};

/// Exit codes: 0 success, 1 findings or evaluation failure, 2 usage or I/O
/// errors.
#[derive(Debug)]
pub enum CliError {
    Core(vibed_core::Error),
    Usage(String),
    Findings(String),
}

impl From<vibed_core::Error> for CliError {
    fn from(e: vibed_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use vibed_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Findings(_) => 1,
            CliError::Core(e) => match e {
                E::Io { .. }
                | E::BadMagic { .. }
                | E::UnsupportedVersion { .. }
                | E::Truncated { .. }
                | E::Checksum { .. }
                | E::Format { .. }
                | E::Config(_) => 2,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Findings(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "vibed", version, about = "Dual-stream video engagement classifier")]
struct Cli {
    /// More log output on stderr (-v debug, -vv trace). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the train split, validating every epoch.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Predict engagement levels for VBFS files.
    Predict(PredictArgs),
    /// Write a class-separable synthetic dataset.
    Synth(SynthArgs),
    /// Check a dataset's manifest and feature files.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct DataArgs {
    /// Dataset manifest. Defaults to `$VIBED_DATA_DIR/manifest.jsonl`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "VIBED_DATA_DIR", hide_env_values = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `key = value` file; command-line flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for checkpoints and the training log.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Seeds initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// LSTM hidden size or Transformer model width.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Encoder layers for the chosen variant.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Encoder dropout rate.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub mlp_dropout: Option<f64>,
    /// Save a numbered checkpoint every N epochs (0: only the last).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for vibed_core::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => vibed_core::Split::Train,
            SplitArg::Val => vibed_core::Split::Val,
            SplitArg::Test => vibed_core::Split::Test,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint path, or `best` for the best checkpoint in `--run-dir`.
    #[arg(long)]
    pub checkpoint: String,
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "table")]
    pub format: FormatArg,
    /// Where to write the confusion matrix CSV. Defaults to
    /// `confusion_<split>.csv` next to the checkpoint.
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
    /// Also write the confusion matrix as a grayscale PGM image.
    #[arg(long)]
    pub confusion_pgm: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A VBFS file, or a directory of them (manifest order when it has a
    /// manifest, otherwise file name order).
    pub input: PathBuf,
    /// Decimal places for probabilities.
    #[arg(long, default_value_t = 2)]
    pub digits: u32,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 8)]
    pub t: usize,
    /// Feature width.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory. Defaults to `$VIBED_DATA_DIR`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "VIBED_DATA_DIR", hide_env_values = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Synth(a) => commands::synth(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
