//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Failures raised by sampling, discretization, solves and studies.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    #[error("invalid point-process parameters: {0}")]
    InvalidProcess(String),

    #[error("configuration has no particles")]
    EmptyConfiguration,

    #[error("invalid grid extent: {0}")]
    InvalidExtent(String),

    #[error("particle {index} does not fit inside the grid: {reason}")]
    ParticleOutOfDomain { index: usize, reason: String },

    #[error("interface at y = {height} does not lie on a grid line")]
    UnsnappedInterface { height: f64 },

    #[error("invalid DtN specification: {0}")]
    InvalidDtnSpec(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("grid too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too many failed samples: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Config(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
