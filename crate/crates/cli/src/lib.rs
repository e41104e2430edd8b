//! `layersplice` command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O failure (including
//! files that cannot be parsed). Every failure prints exactly one line on
//! stderr of the form `error[Kind]: message`.

mod commands;
mod input;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use layersplice::{Dtype, InterpolationMethod, Scope};

pub use input::{parse_probe, parse_tokens};

#[derive(Debug, Parser)]
#[command(name = "layersplice", version, about = "Insert interpolated blocks into transformer checkpoints")]
pub struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Insert interpolated blocks and write the enlarged checkpoint.
    Splice(SpliceArgs),
    /// Print the interpolation ratio for each position without touching a model.
    Schedule(ScheduleArgs),
    /// List blocks, tensors and config of a checkpoint.
    Inspect(InspectArgs),
    /// Per-block hidden-state fits and consecutive-block KL divergence.
    Diagnose(DiagnoseArgs),
    /// Write a seeded toy checkpoint.
    Genmodel(GenmodelArgs),
    /// Top logits read out from an intermediate block.
    Earlyexit(EarlyExitArgs),
}

#[derive(Debug, Args)]
pub struct SpliceArgs {
    /// Input checkpoint (.safetensors).
    pub input: PathBuf,
    /// Output checkpoint; its config is written next to it.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Zero-based original block indices to insert after, e.g. 24,28.
    #[arg(long, value_delimiter = ',')]
    pub positions: Vec<usize>,
    /// Interpolation method for every position.
    #[arg(long, conflicts_with = "methods")]
    pub method: Option<InterpolationMethod>,
    /// One method per position, in the order given to --positions.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<InterpolationMethod>,
    /// Explicit ratios replacing the schedule, as position=alpha pairs.
    #[arg(long, value_delimiter = ',', value_parser = input::parse_override)]
    pub alpha_overrides: Vec<(usize, f64)>,
    /// Schedule steepness.
    #[arg(long)]
    pub k: Option<f64>,
    /// Schedule center (relative depth where alpha = 0.5).
    #[arg(long)]
    pub c: Option<f64>,
    /// per-tensor or per-layer-concat.
    #[arg(long)]
    pub scope: Option<Scope>,
    /// JSON plan file {positions, methods, overrides, k, c, scope}; wins over flags.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Block tensor name pattern.
    #[arg(long, default_value = "model.layers.{i}.")]
    pub layer_pattern: String,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Block count before insertion.
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    pub positions: Vec<usize>,
    #[arg(long, default_value_t = layersplice::schedule::DEFAULT_STEEPNESS)]
    pub k: f64,
    #[arg(long, default_value_t = layersplice::schedule::DEFAULT_CENTER)]
    pub c: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// Treat config/tensor inconsistencies as errors.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value = "model.layers.{i}.")]
    pub layer_pattern: String,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Checkpoint to report on (omit when using --compare).
    #[arg(required_unless_present = "compare")]
    pub model: Option<PathBuf>,
    /// JSON-lines file, one array of token ids per line.
    #[arg(long)]
    pub probe: PathBuf,
    /// Base checkpoint followed by one or more spliced checkpoints.
    #[arg(long, num_args = 2.., value_names = ["BASE", "SPLICED"], conflicts_with = "model")]
    pub compare: Vec<PathBuf>,
    /// scalar (one normal per block) or per-dimension (summed per-dimension KL).
    #[arg(long, default_value = "scalar")]
    pub mode: layersplice::diagnostics::FitMode,
    /// Also write the JSON output to this file.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenmodelArgs {
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 88)]
    pub intermediate: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 10_000.0)]
    pub rope_theta: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Storage dtype: f64, f32, f16 or bf16.
    #[arg(long, default_value = "f32")]
    pub dtype: Dtype,
}

#[derive(Debug, Args)]
pub struct EarlyExitArgs {
    pub model: PathBuf,
    /// Token ids: a JSON array or whitespace/comma separated.
    #[arg(long)]
    pub tokens: String,
    /// Block whose output is read out.
    #[arg(long)]
    pub layer: usize,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

/// A failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Core(layersplice::Error),
    Usage { kind: &'static str, message: String },
}

impl CliError {
    pub fn usage(kind: &'static str, message: impl Into<String>) -> Self {
        CliError::Usage { kind, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage { kind, .. } => kind,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage { message, .. } => message.clone(),
        }
    }
}

impl From<layersplice::Error> for CliError {
    fn from(e: layersplice::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    0
                }
                _ => {
                    // everything before the usage block, folded onto one line
                    let summary: Vec<&str> = rendered
                        .lines()
                        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .collect();
                    let summary = summary.join(" ");
                    let summary = summary.trim_start_matches("error: ");
                    let _ = writeln!(err, "error[Usage]: {summary}");
                    1
                }
            };
        }
    };
    match commands::dispatch(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.kind(), e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}
