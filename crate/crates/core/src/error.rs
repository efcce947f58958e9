use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("{path}: row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },

    #[error("non-consecutive dates: {0}")]
    NonConsecutiveDates(String),

    #[error("empty observation set")]
    EmptyObservations,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("diffusion step unstable: needs at least {required} sub-steps per day (configured {configured})")]
    UnstableDiffusion { required: usize, configured: usize },

    #[error("energy budget does not close on day {day}: residual {residual:.3} W/m2 exceeds {tolerance} W/m2")]
    ClosureViolated {
        day: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::Row { .. }
                | Error::NonConsecutiveDates(_)
                | Error::EmptyObservations
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io { .. }
                | Error::InvalidInput(_)
                | Error::OutOfRange(_)
                | Error::Shape(_)
        )
    }
}
