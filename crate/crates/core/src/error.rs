use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// The variants split into two families that callers (notably the CLI) treat
/// differently: malformed input (`InvalidModel`, `Config`, `Parse`, ...) and
/// violated theoretical assumptions (`StepTooLarge`), which are well-formed
/// requests whose parameters fall outside the regime the step-size rules
/// were derived for.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance model: {0}")]
    InvalidModel(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("basis is not orthonormal: max |<u_i,u_j> - delta_ij| = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("eigengap undefined for a one-dimensional model")]
    GapUndefined,

    #[error("step size {eta} exceeds 1 ({rule}); adjust T, b, p or lambda")]
    StepTooLarge { eta: f64, rule: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("stream exhausted after {consumed} of {requested} samples")]
    StreamExhausted { consumed: u64, requested: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("file streams need a declared noise bound b")]
    MissingBound,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors that flag a violated step-size assumption rather than
    /// malformed input.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(self, Error::StepTooLarge { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
