//! Causal constant-velocity Kalman filtering and online aspect estimation.
//!
//! The filter state is `(x, y, vx, vy)` with a white-acceleration process model
//! and position-only measurements. Heading comes from the filtered velocity
//! (default) or from successive filtered positions; the aspect is the wrapped
//! difference between heading and the radar line-of-sight azimuth.

mod estimate;
mod filter;

pub use estimate::{
    contiguous_windows, estimate_aspect_series, evaluate_estimator, segment_trajectory, AspectEstimate,
    EstimatorReport, HeadingMode, KStats, SegmentScore, Summary, DEFAULT_MAX_GAP,
};
pub use filter::{
    estimate_heading, heading_from_positions, kf_init, kf_predict, kf_step, kf_update, KfParams, StepOutcome,
    TrackState, LOW_SPEED_FLOOR,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error("time step {0} must be positive")]
    NonPositiveDt(f64),
    #[error("speed {speed:.4} m/s below the {floor} m/s heading floor")]
    LowSpeed { speed: f64, floor: f64 },
    #[error("coincident successive positions")]
    Degenerate,
    #[error("timestamps not strictly increasing at index {index} ({prev} -> {next})")]
    Ordering { index: usize, prev: f64, next: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("first measurement is not finite")]
    NonFiniteInit,
    #[error("invalid context range {k_min}..={k_max}")]
    InvalidRange { k_min: usize, k_max: usize },
}
