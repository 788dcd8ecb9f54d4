//! Double-precision tensors, a reverse-mode tape, the layers built on it and
//! the three angle-conditioning mechanisms.

mod checkpoint;
mod cond;
mod gradcheck;
mod layers;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_into, parse_checkpoint, read_checkpoint, save_checkpoint, CheckpointHeader,
    TensorEntry,
};
pub use cond::{cbn, concat_condition, encode_angle, encode_angles, film, CondVector, ANGLE_ENCODING_DIM};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use layers::{
    AffinePredictor, BatchNorm, BufferId, Conv1d, Linear, Mode, ParamId, ParamStore, BN_EPS, BN_MOMENTUM,
};
pub use optim::Sgd;
pub use tape::{softmax, BatchStats, Tape, Var};
pub use tensor::Tensor3;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar([usize; 3]),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
