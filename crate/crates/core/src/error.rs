use thiserror::Error;

use crate::geometry::GeometryError;
use crate::kalman::KalmanError;
use crate::nn::NnError;
use crate::pipeline::PipelineError;
use crate::simulator::SimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Simulator(#[from] SimError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{failed} of {total} child runs failed (e.g. {first}, exit code {code})")]
    Child {
        failed: usize,
        total: usize,
        first: String,
        code: i32,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric divergence. Failed
    /// child runs report the highest child code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Child { code, .. } => *code,
            Error::Pipeline(PipelineError::Divergence { .. }) => 4,
            _ => 3,
        }
    }
}
