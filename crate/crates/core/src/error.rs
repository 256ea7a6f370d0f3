use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid evidence counter (r={positive}, s={negative}): counters must be finite and non-negative")]
    InvalidEvidence { positive: f64, negative: f64 },

    #[error("invalid opinion: {0}")]
    InvalidOpinion(String),

    #[error("cumulative fusion is undefined for two dogmatic opinions (both uncertainties are zero)")]
    DogmaticFusion,

    #[error("dogmatic LTA report rejected for vehicle {0}: uncertainty must be positive")]
    DogmaticReport(u32),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("origin and destination lanes are on the same road ({0})")]
    SameRoad(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
