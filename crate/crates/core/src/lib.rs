//! Aspect-angle-aware HRRP classification laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: wrapped angles, line-of-sight azimuth, aspect angle and the
//!   length-on-range-profile (LRP) measure.
//! * [`simulator`]: point-scatterer targets, range-profile rendering, ship
//!   trajectories and on-disk datasets.
//! * [`kalman`]: causal constant-velocity filtering and online aspect estimation.
//! * [`nn`]: a small double-precision tensor stack with a reverse-mode tape and
//!   the concat / FiLM / CBN conditioning operators.
//! * [`models`]: MLP / ConvNet / ResNet-1D backbones and sequence aggregators.
//! * [`pipeline`]: splits, class weights, sequence construction, training,
//!   metrics and the predicted-aspect protocol.
//! * [`cli`]: the command implementations behind the `hrrp-lab` binary.

// Index loops mirror the math; `!(a > b)` comparisons deliberately catch NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod geometry;
pub mod kalman;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
