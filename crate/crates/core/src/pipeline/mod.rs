//! Splits, class weights, sequence construction, training, metrics and the
//! predicted-aspect protocol.

mod aspects;
mod data;
mod metrics;
mod results;
mod split;
mod train;

use thiserror::Error;

pub use aspects::{
    apply_aspects, predict_aspects, read_aspects_csv, write_aspects_csv, AspectEstimatorConfig, AspectPred,
    AspectStatus, ASPECT_PRED_FILE, WARMUP_STEPS,
};
pub use data::{
    assemble_batch, build_sequences, jitter_angle, prepare, record_angle, AngleSource, Prepared, Sample, SequenceSet,
    Task,
};
pub use metrics::MetricsReport;
pub use results::{read_results_csv, render_report, write_results_csv, ResultRow};
pub use split::{class_weights, stratified_split, temporal_split, Split, SplitAssignment, DEFAULT_RATIOS};
pub use train::{evaluate, split_samples, train, EpochLog, SampleCounts, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("class {class} has {count} records; at least 3 are needed to split")]
    TooFewRecords { class: usize, count: usize },
    #[error("class {class} has no training records")]
    EmptyClass { class: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}; lower lr or check inputs")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("no predicted aspect angles attached; run `hrrp-lab attach-aspects` and pass its output with --aspects")]
    MissingPredicted,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}
