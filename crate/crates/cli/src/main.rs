//! `kmspc`: calibrate, optimize and apply kernel-PCA process monitors.
//!
//! Settings are resolved in three layers: built-in defaults, then the JSON
//! config given with `--config` (a run manifest works too), then flags.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kmspc::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "kmspc", version, about = "Kernel MSPC fault detection with learned kernel parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit PCA or KPCA on normal data and derive control limits.
    Calibrate(RunArgs),
    /// Learn kernel parameters, then refit and recalibrate the model.
    Optimize(OptimizeArgs),
    /// Chart a test sequence against a saved model and score it.
    Monitor(MonitorArgs),
    /// Summarize the manifests found under a directory of runs.
    Report(ReportArgs),
    /// Write a synthetic data set and a starter config.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// JSON run config or manifest.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Normal-operation calibration data.
    #[arg(long)]
    pub normal: Option<PathBuf>,
    /// Faulty calibration data; repeat for multi-fault training.
    #[arg(long)]
    pub faulty: Vec<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of retained components.
    #[arg(long = "components", short = 'H')]
    pub h: Option<usize>,
    /// `pca` or `kpca`.
    #[arg(long = "model-kind")]
    pub model_kind: Option<String>,
    /// Kernel JSON, or an optimizer result whose learned kernel is used.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// `gaussian_chi2`, `f_chi2` or `gaussian`.
    #[arg(long)]
    pub limit_method: Option<String>,
    #[arg(long)]
    pub log_scale: bool,
    /// Record wall-clock times (makes artifacts differ between runs).
    #[arg(long)]
    pub record_timings: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `kernel_flows`, `line_search`, `nelder_mead` or `ga`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Samples drawn per class and sub-iteration.
    #[arg(long)]
    pub ns: Option<usize>,
    /// Step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Logistic temperature of the smooth training loss.
    #[arg(long)]
    pub surrogate_tau: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct MonitorArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Saved model document.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// 1-based index of the first faulty sample; `n + 1` means none.
    #[arg(long, conflicts_with_all = ["onset_hours", "sampling_minutes"])]
    pub onset: Option<usize>,
    #[arg(long, requires = "sampling_minutes")]
    pub onset_hours: Option<f64>,
    #[arg(long, requires = "onset_hours")]
    pub sampling_minutes: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub limit_method: Option<String>,
    #[arg(long)]
    pub log_scale: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Directory holding one run per subdirectory.
    #[arg(long)]
    pub runs: PathBuf,
    /// Where the summary goes; defaults to the runs directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// `mean_step`, `variance_shift` or `nonlinear_coupling`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n_normal: Option<usize>,
    #[arg(long)]
    pub n_faulty: Option<usize>,
    /// Normal samples at the start of the test sequence.
    #[arg(long)]
    pub n_before: Option<usize>,
    #[arg(long)]
    pub n_after: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// A library error tagged with the pipeline stage it came from.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: kmspc::Error,
}

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<kmspc::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KMSPC_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::Monitor(a) => commands::monitor(&a),
        Command::Report(a) => commands::report(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage, e.error);
            ExitCode::from(exit_code(e.error.kind()))
        }
    }
}
