use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("unmixing matrix is singular (|det B| = {0:e})")]
    SingularB(f64),

    #[error("source covariance is not positive definite: {0}")]
    SingularSigma(String),

    #[error("observation covariance is singular: {0}")]
    SingularCovariance(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {msg}")]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !($cond) {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
