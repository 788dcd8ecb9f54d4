//! The `hrrp-lab` command line: data generation, aspect estimation, training,
//! evaluation, reporting and parallel experiment grids.
//!
//! Every command writes a [`RunManifest`] next to its outputs. Output files
//! are written to a temporary sibling and renamed into place.

mod commands;
mod grid;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::kalman::{HeadingMode, DEFAULT_MAX_GAP};
use crate::pipeline::{AngleSource, Split};

pub use grid::{expand_grid, GridRun};
pub use manifest::{content_hash, file_sha256, OutputEntry, Recorder, RunManifest, RUN_MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "hrrp-lab",
    version,
    about = "Aspect-conditioned HRRP classification experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a key-value config.
    GenData(GenDataArgs),
    /// Score the Kalman aspect estimator on trajectory CSVs.
    KalmanEval(KalmanEvalArgs),
    /// Estimate aspect angles for every record of a dataset (sidecar CSV).
    AttachAspects(AttachArgs),
    /// Train one model and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Render results CSV rows as markdown tables.
    Report(ReportArgs),
    /// Run a conditioning x backbone x seed grid of training runs.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// Measurement noise std (m); `r = sigma^2`.
    #[arg(long)]
    pub meas_sigma: Option<f64>,
    /// White-acceleration intensity (m^2/s^3).
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long, default_value_t = 10.0)]
    pub p0: f64,
    /// Split tracks at gaps longer than this (s).
    #[arg(long, default_value_t = DEFAULT_MAX_GAP)]
    pub max_gap: f64,
    /// `velocity` or `position`.
    #[arg(long, default_value = "velocity")]
    pub heading: HeadingMode,
}

#[derive(Debug, Args)]
pub struct KalmanEvalArgs {
    /// A trajectory CSV or a directory of them.
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub radar_x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub radar_y: f64,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Start offset between evaluated segments; defaults to `k_max`
    /// (non-overlapping).
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the per-segment CSV.
    #[arg(long)]
    pub no_segment_csv: bool,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct AttachArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the sidecar CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Use only the last `k` measurements per estimate.
    #[arg(long)]
    pub context: Option<usize>,
    #[command(flatten)]
    pub filter: FilterArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Predicted-aspect sidecar written by `attach-aspects`.
    #[arg(long)]
    pub aspects: Option<PathBuf>,
    /// Also append the result row to this CSV.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Defaults to the source the model was trained with.
    #[arg(long)]
    pub angle_source: Option<AngleSource>,
    #[arg(long)]
    pub aspects: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also append the result row to this CSV.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results_csv: PathBuf,
    #[arg(long)]
    pub out_md: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Training config plus list keys `conditionings`, `backbones`, `seeds`
    /// and optionally `angle_sources`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub aspects: Option<PathBuf>,
    /// Parallel training processes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(cli: Cli) -> crate::Result<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::KalmanEval(a) => commands::kalman_eval(&a),
        Command::AttachAspects(a) => commands::attach_aspects(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(a) => commands::report(&a),
        Command::Grid(a) => grid::run_grid(&a),
    }
}
