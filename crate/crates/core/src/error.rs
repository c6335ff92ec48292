use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path} contains no records")]
    EmptyFile { path: PathBuf },

    #[error("duplicate clip id `{0}`")]
    DuplicateId(String),

    #[error("unknown clip id `{0}`")]
    UnknownId(String),

    #[error("invalid clip `{id}`: {reason}")]
    InvalidClip { id: String, reason: String },

    #[error("invalid prediction for `{id}`: {reason}")]
    InvalidPrediction { id: String, reason: String },

    #[error("missing prediction for unlabeled clip `{0}`")]
    MissingPrediction(String),

    #[error("trajectory length mismatch: {left} vs {right} waypoints")]
    LengthMismatch { left: usize, right: usize },

    #[error("all stratum counts are zero")]
    AllCountsZero,

    #[error("stratum has a positive share but no clips")]
    EmptyStratum,

    #[error("budget of {requested} exceeds the {available} available clips")]
    BudgetExceedsPool { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid selection state: {0}")]
    Selection(String),

    #[error("prediction provider failed: {0}")]
    Provider(String),

    #[error("step errors must have exactly 6 entries, got {0}")]
    StepErrorsLength(usize),

    #[error("horizon must be 1, 2 or 3 seconds, got {0}")]
    InvalidSecond(u32),

    #[error("overlap of an empty set is undefined")]
    EmptyOverlapSet,

    #[error("held-out clip `{0}` was also used for training")]
    HeldoutOverlap(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
