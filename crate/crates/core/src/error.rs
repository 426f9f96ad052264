use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incomplete calibration: missing sensors {missing:?}")]
    IncompleteCalibration { missing: Vec<u16> },

    #[error("sensor {0} has no calibration")]
    Uncalibrated(u16),

    #[error("bone {0} is missing from the frame")]
    MissingBone(String),

    #[error("sensor {0} is missing from the recording")]
    MissingSensor(u16),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error at line {line}: sensor {sensor} seq {seq}: {msg}")]
    Validation {
        line: usize,
        sensor: u16,
        seq: u64,
        msg: String,
    },

    #[error("series do not overlap in time")]
    NoOverlap,

    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn unknown(kind: &'static str, name: impl Into<String>) -> Self {
        Error::Unknown {
            kind,
            name: name.into(),
        }
    }
}
