use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input for subject `{subject}`: {reason}")]
    InvalidSubject { subject: String, reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dataset is empty after excluding subjects without events")]
    EmptyDataset,

    #[error("{file}:{line}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("subject `{subject}`: event on day {day} lies outside the observation period [{start}, {end})")]
    EventOutsidePeriod {
        subject: String,
        day: i64,
        start: i64,
        end: i64,
    },

    #[error("exp overflow: linear predictor reached {max_abs_xbeta} (limit {limit})")]
    Overflow { max_abs_xbeta: f64, limit: f64 },

    #[error("flat direction: zero curvature without a prior for coordinate {0}")]
    UndefinedStep(usize),

    #[error("internal consistency breach: {0}")]
    Internal(String),

    #[error("no valid grid point: every variance failed in at least one fold")]
    NoValidGridPoint,

    #[error("all {0} bootstrap replicates failed to converge")]
    NoConvergedReplicates(usize),

    #[error("simulation kept zero subjects; increase the baseline rate or subject count")]
    NothingSimulated,

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
}
