use std::path::PathBuf;

/// Errors raised by the observer-synthesis library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input: dimension mismatch, empty data, out-of-range parameter.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Requested configuration is outside the implemented range.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A linear system could not be solved to the required accuracy.
    #[error("ill-conditioned system in {context} (smallest pivot {pivot:e})")]
    Conditioning { context: String, pivot: f64 },

    /// Non-finite values or an eigensolver breakdown.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
