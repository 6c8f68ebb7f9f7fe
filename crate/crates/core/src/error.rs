use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated an operation's precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// `T - ξ` is not a whole number of grid steps.
    #[error("horizon {xi} is not commensurate with the grid of [0, {horizon}] (step {step})")]
    Incommensurate { xi: f64, horizon: f64, step: f64 },

    /// The discretized connecting operator (or one of its prefixes) is not
    /// positive definite.
    #[error(
        "Condition 3 violated by data: {what} is not positive definite \
         (pivot {pivot:e} at index {index})"
    )]
    NotPositiveDefinite {
        what: String,
        index: usize,
        pivot: f64,
    },

    #[error("cannot select decaying solution: {0}")]
    NoDecayingSolution(String),

    #[error("defect element vanishes at node {index} (x = {x})")]
    VanishingDefect { index: usize, x: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    /// `true` for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::NoDecayingSolution(_)
                | Error::VanishingDefect { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
