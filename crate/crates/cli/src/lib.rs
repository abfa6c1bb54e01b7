//! Command-line front end: `power`, `ablate`, `train`, `eval` and `replay`.
//!
//! Every command writes its outputs plus a `manifest.toml` into the output
//! directory. The manifest is a complete config, so
//! `slice-infomin replay <out>/manifest.toml` reruns the same experiment.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use slice_infomin::{Pattern, TestMethod};

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

pub use config::RunConfig;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("SLICE_INFOMIN_GIT_REV"));

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<slice_infomin::Error> for CliError {
    fn from(e: slice_infomin::Error) -> Self {
        match e {
            slice_infomin::Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<slice_infomin::train::TrainAbort> for CliError {
    fn from(e: slice_infomin::train::TrainAbort) -> Self {
        e.error.into()
    }
}

#[derive(Debug, Parser)]
#[command(name = "slice-infomin", version = VERSION, about = "Sliced dependence tests and infomin training")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: out/<command>).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Zero wall-clock columns so outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test power over a pattern × α × method grid.
    Power(PowerArgs),
    /// Slice-method power as a function of the slice count.
    Ablate(AblateArgs),
    /// Infomin training, optionally over a β grid.
    Train(TrainArgs),
    /// Dependence metrics between encoded features and protected columns.
    Eval(EvalArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Power(_) => "power",
            Command::Ablate(_) => "ablate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub fit_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub significance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long, value_delimiter = ',')]
    pub patterns: Option<Vec<Pattern>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<TestMethod>>,
    /// Slice count for the slice method.
    #[arg(long)]
    pub slices: Option<usize>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Slice counts to compare.
    #[arg(long, value_delimiter = ',')]
    pub slices: Option<Vec<usize>>,
    #[arg(long)]
    pub pattern: Option<Pattern>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Built-in synthetic dataset.
    #[arg(long, value_parser = ["fairness-toy"], conflicts_with = "data")]
    pub synthetic: Option<String>,
    /// CSV dataset; needs --schema.
    #[arg(long, requires = "schema")]
    pub data: Option<PathBuf>,
    /// Column-role TOML for --data.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Rows generated for the synthetic dataset.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub train_rows: Option<usize>,
    #[arg(long)]
    pub test_rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, conflicts_with = "beta_grid")]
    pub beta: Option<f64>,
    /// Train one model per β and select the largest within tolerance.
    #[arg(long, value_delimiter = ',')]
    pub beta_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub n_prime: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Encoder checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub slices: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
