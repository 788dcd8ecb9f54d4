//! Synthetic aspect-dependent range profiles and ship trajectories.
//!
//! Targets are 2D point-scatterer models. A profile is formed by projecting the
//! scatterers onto the line of sight and summing their returns into range bins,
//! the desk-scale analog of aggregating RCS over the azimuth span of a
//! detection cone.

mod dataset;
mod render;
mod target;
mod trajectory;

pub use dataset::{
    gen_dataset, load_dataset, write_dataset, Dataset, DatasetConfig, Manifest, Preset, ProfileRecord, RecordIndex,
    ShipEntry, MANIFEST_FILE, RECORDS_FILE, TRAJECTORY_DIR,
};
pub use render::{project_scatterers, render_hrrp, RenderParams};
pub use target::{Scatterer, TargetModel};
pub use trajectory::{
    gen_trajectory, random_turn_schedule, read_trajectory_csv, write_trajectory_csv, TrajectoryConfig,
    TrajectorySample, TrajectorySpec, TurnLeg,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scatterer at range offset {offset:.3} m falls outside the {span:.3} m profile span")]
    OutOfSpan { offset: f64, span: f64 },
    #[error("trajectory csv: {0}")]
    Csv(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
