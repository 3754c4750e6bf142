use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Variants are grouped by the exit
/// category they map to in the command-line runner (see [`Error::category`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed {file}: bad {field} ({detail})")]
    Format {
        file: String,
        field: &'static str,
        detail: String,
    },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot compose network: {0}")]
    Composition(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("regression is degenerate: column `{column}` {reason}")]
    Degeneracy { column: &'static str, reason: String },

    #[error("refused: {0}")]
    Refused(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("integrity check failed for {path}: expected sha256 {expected}, got {actual}")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("transport error fetching {url} (retryable): {message}")]
    Transport { url: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Argument(_) | Error::Refused(_) | Error::Validation(_) => ErrorCategory::Config,
            Error::Divergence { .. } | Error::Degeneracy { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }

    /// True for failures that may succeed when simply retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
