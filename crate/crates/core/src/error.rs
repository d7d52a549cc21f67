use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    Degenerate6d(&'static str),

    #[error("matrix is not a rotation (orthonormality residual {residual:.3e})")]
    NotOrthonormal { residual: f64 },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid length: {0}")]
    InvalidLength(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by malformed input data rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Degenerate6d(_) | Error::Io(_))
    }
}
