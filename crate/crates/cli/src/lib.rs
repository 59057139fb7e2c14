//! `volo` command line: inspection, verification, benchmarking and toy
//! training.
//!
//! Exit codes: 0 success, 1 verification failure or runtime error, 2 usage
//! error. `VOLO_THREADS` sets the worker count for parallel commands.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use volo::model::{ModelConfig, PRESET_NAMES};
use volo::TensorError;

pub mod bench;
pub mod commands;
pub mod inspect;


pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "VOLO_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Verification(_) | Self::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Verification(m) => write!(f, "verification failed: {m}"),
            Self::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Config(_) => Self::Usage(e.to_string()),
            other => Self::Runtime(other.into()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "volo", version, about = "Outlook attention and VOLO models: inspect, verify, benchmark, train")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model preset (d1..d5, tiny) or path to a JSON config.
    #[arg(long, global = true, value_name = "PATH|PRESET")]
    pub config: Option<String>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Input resolution (defaults to the config's image size).
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Print a JSON document instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
    /// Also write machine-readable rows to this CSV file.
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layer list, parameter count and analytic multiply-adds of a model.
    Inspect(inspect::InspectArgs),
    /// Finite-difference gradient checks of every layer and block.
    Gradcheck(commands::GradcheckArgs),
    /// Compare optimized layers against brute-force references.
    OracleCheck(commands::OracleArgs),
    /// Time token mixers over a grid of shapes.
    Bench(bench::BenchArgs),
    /// Train a small model on synthetic data.
    TrainToy(commands::TrainArgs),
    /// Generate the synthetic dataset.
    GenData(commands::GenDataArgs),
}

/// Resolves a preset name or a JSON file.
pub fn load_config(arg: &str) -> CliResult<(String, ModelConfig)> {
    if let Ok(c) = ModelConfig::preset(arg) {
        return Ok((arg.to_ascii_lowercase(), c));
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "'{arg}' is neither a preset ({}) nor an existing file",
            PRESET_NAMES.join(", ")
        )));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {arg}: {e}")))?;
    let config = ModelConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{arg}: {e}")))?;
    let name = path.file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
    Ok((name, config))
}

/// Worker count from [`THREADS_ENV`], defaulting to one.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

pub(crate) fn thread_pool() -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))
}

pub(crate) fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult {
    let mut text = String::with_capacity(rows.iter().map(|r| r.len() + 1).sum::<usize>() + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(anyhow::anyhow!("writing {}: {e}", path.display())))
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out`. Returns the process exit code.
pub fn run<I, A>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if e.use_stderr() {
                eprint!("{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let c = &cli.common;
    match &cli.command {
        Command::Inspect(a) => inspect::cmd_inspect(c, a, out),
        Command::Gradcheck(a) => commands::cmd_gradcheck(c, a, out),
        Command::OracleCheck(a) => commands::cmd_oracle_check(c, a, out),
        Command::Bench(a) => bench::cmd_bench(c, a, out),
        Command::TrainToy(a) => commands::cmd_train_toy(c, a, out),
        Command::GenData(a) => commands::cmd_gen_data(c, a, out),
    }
}
