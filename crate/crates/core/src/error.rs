use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the rating pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: u64,
        field: String,
        message: String,
    },

    #[error("duplicate entry for driver `{driver}` in {season} round {round} ({session})")]
    DuplicateEntry {
        season: u16,
        round: u16,
        session: String,
        driver: String,
    },

    #[error("line {line}: position {position} outside [1, {entrant_count}]")]
    PositionOutOfRange {
        line: u64,
        position: u32,
        entrant_count: u32,
    },

    #[error("invalid parent map: {0}")]
    InvalidParentMap(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("fit as of {season} round {round}: {source}")]
    FitFailed {
        season: u16,
        round: u16,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    EmptyInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for solver and degenerate-statistic failures, as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::FitFailed { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
