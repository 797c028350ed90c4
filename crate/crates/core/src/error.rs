use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the projection engine and its models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", file.display())]
    Schema {
        file: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cell ({row}, {col}) is out of bounds for a {n_rows}x{n_cols} raster")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("model could not be estimated: {0}")]
    Unestimable(String),

    #[error("zero-variance forecasts disagree: {0} vs {1}")]
    InconsistentForecasts(f64, f64),

    #[error("non-finite population at cell ({row}, {col}) in {year} after {stage}")]
    NonFinite {
        row: usize,
        col: usize,
        year: i32,
        stage: &'static str,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn schema(file: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than a bug.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_) | Error::NonFinite { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
