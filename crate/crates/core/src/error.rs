use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss does not depend on any tensor that requires a gradient")]
    DetachedGraph,

    #[error("function under gradcheck is not deterministic")]
    NonDeterministic,

    #[error("gradcheck failed: max relative error {max_rel:.3e} exceeds {tol:.1e}")]
    GradcheckFailed { max_rel: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input {height}x{width} is not divisible by {multiple}; pad to {padded_height}x{padded_width}")]
    Divisibility {
        height: usize,
        width: usize,
        multiple: usize,
        padded_height: usize,
        padded_width: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("checkpoint config hash mismatch: file has {found}, model expects {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, shape: &[usize], reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Divisibility { .. }
            | Error::HashMismatch { .. } => 2,
            Error::Data(_)
            | Error::Io { .. }
            | Error::Truncated(_)
            | Error::Corrupt(_)
            | Error::CheckpointShape { .. } => 3,
            Error::NonFinite { .. }
            | Error::Numeric(_)
            | Error::GradcheckFailed { .. }
            | Error::NonDeterministic => 4,
            Error::ShapeMismatch { .. }
            | Error::InvalidShape { .. }
            | Error::NonScalarLoss(_)
            | Error::DetachedGraph
            | Error::MissingGradient(_) => 4,
        }
    }
}
