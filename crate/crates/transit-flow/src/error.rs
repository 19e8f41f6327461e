//! Crate error type.

use std::path::PathBuf;

/// All failure modes surfaced by the library.
///
/// IO and CSV problems keep the offending path / line where available so CLI
/// messages can point at the exact input row.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying file IO failure, annotated with the path.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV structure (wrong column count, bad quoting, ...).
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// A parseable row with an invalid value (bad timestamp, RSSI out of
    /// range, unknown protocol, ...). `line` is 1-based and counts the header.
    #[error("invalid record in {path} line {line}: {message}")]
    InvalidRecord {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// Input violated a documented precondition of an algorithm.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Ground-truth counts do not satisfy the onboard conservation identity.
    #[error("ground truth inconsistent for trip {trip_id} at stop {stop_seq}: {message}")]
    InconsistentTruth {
        trip_id: String,
        stop_seq: u32,
        message: String,
    },

    /// Bad key or value in a pipeline configuration file.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric procedure could not proceed (singular system, empty cluster
    /// that could not be repaired, undefined index).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// JSON (de)serialization failure for reports and model files.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an IO error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap a CSV error with the path it occurred on.
    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Build an [`Error::InvalidRecord`] for a 1-based CSV line.
    pub fn record(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::InvalidRecord {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
