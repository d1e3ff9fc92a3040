use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value at coordinate {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A loss evaluation returned NaN or infinity.
    #[error("loss evaluation at {point} returned {value}")]
    Evaluation { point: &'static str, value: f64 },

    /// The optimizer produced a non-finite update and aborted.
    #[error(
        "non-finite update at stage {stage}, iteration {iteration}{}: {detail}",
        direction_suffix(*.direction)
    )]
    Diverged {
        stage: u64,
        iteration: u64,
        /// `None` when the failure is in the aggregated update.
        direction: Option<u64>,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by the numerics rather than by the caller's
    /// inputs or the filesystem.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Evaluation { .. } | Error::Diverged { .. }
        )
    }
}

fn direction_suffix(direction: Option<u64>) -> String {
    direction.map(|p| format!(", direction {p}")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
