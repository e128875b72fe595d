//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by panel ingestion, model fitting and entropy estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The same (date, entity) observation appeared twice in one stream.
    #[error("duplicate observation for ({date}, {entity})")]
    DuplicateKey { date: String, entity: String },

    /// The stream contained no usable data rows.
    #[error("input contains no usable rows")]
    EmptyInput,

    #[error("insufficient data: need {needed}, have {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Calendar intersection left too few shared dates.
    #[error("insufficient overlap: intersection leaves {got} dates, need {needed}")]
    InsufficientOverlap { needed: usize, got: usize },

    /// Unpenalized normal equations are rank deficient.
    #[error("singular system: XX' is not positive definite with lambda = 0; use a positive ridge penalty")]
    SingularSystem,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Input violates a documented data contract.
    #[error("{0}")]
    Data(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    /// Two results that must share estimator/lag/data do not.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Series passed to the TE stage are not on a common calendar.
    #[error("calendar mismatch: {0}; series must be intersected first")]
    CalendarMismatch(String),

    /// Error raised while processing one rolling window.
    #[error("window ending {end_date}: {source}")]
    Window {
        end_date: String,
        #[source]
        source: Box<Error>,
    },

    /// Invalid synthetic-generator specification.
    #[error("invalid generator spec: {0}")]
    SynthSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Tags an error with the end date of the rolling window it came from.
    pub fn in_window(self, end_date: chrono::NaiveDate) -> Self {
        Error::Window {
            end_date: end_date.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
