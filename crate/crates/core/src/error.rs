use thiserror::Error;

/// Errors produced by the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violates a documented precondition.
    #[error("invalid {field}: {reason}")]
    Precondition { field: String, reason: String },

    /// An input value is NaN or infinite.
    #[error("non-finite value in {field}")]
    NonFinite { field: String },

    /// The integrated state left the representable range.
    #[error("trajectory diverged at t = {time:e} s")]
    Divergence { time: f64 },

    /// Not enough data (samples, epochs, bins) to compute a result.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn precondition(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Precondition {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, reason: impl ToString) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Precondition { .. } | Error::NonFinite { .. } | Error::Parse { .. } => 2,
            Error::Divergence { .. } => 3,
            Error::InsufficientData(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}

pub(crate) fn ensure_finite(field: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            field: field.to_string(),
        })
    }
}
