use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the analysis pipeline.
///
/// Variants fall into three families that callers (the CLI in particular)
/// map onto distinct exit codes: invalid input or configuration, data
/// problems, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{column}` (mapped from {variable}) in header")]
    MissingColumn { variable: String, column: String },

    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    ParseNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate observation for subject `{subject}` at time {time}")]
    DuplicateObservation { subject: String, time: f64 },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {time} of subject `{subject}` exceeds horizon {horizon}")]
    TimeBeyondHorizon {
        subject: String,
        time: f64,
        horizon: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("local fit is degenerate at t = {t0} even after widening the window")]
    DegenerateSmoother { t0: f64 },

    #[error("covariance is not positive definite for subject `{subject}`")]
    NotPositiveDefinite { subject: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSmoother { .. } | Error::NotPositiveDefinite { .. } | Error::Numerical(_)
        )
    }

    /// True for errors caused by the content of input files.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::MissingColumn { .. }
                | Error::ParseNumber { .. }
                | Error::DuplicateObservation { .. }
                | Error::TimeBeyondHorizon { .. }
                | Error::InsufficientData(_)
        )
    }
}
