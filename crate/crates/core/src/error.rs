use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the connectedness pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: cannot parse date {value:?}")]
    BadDate { row: usize, value: String },

    #[error("row {row}, column {column:?}: cannot parse number {value:?}")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: duplicate date {date}")]
    DuplicateDate { row: usize, date: NaiveDate },

    #[error("row {row}: date {date} is earlier than the previous row")]
    UnsortedDate { row: usize, date: NaiveDate },

    #[error("duplicate series label {0:?}")]
    DuplicateLabel(String),

    #[error("series {0:?} has no observed values")]
    EmptySeries(String),

    #[error("nonpositive price {value} for series {label:?} at row {row}")]
    NonPositivePrice {
        row: usize,
        label: String,
        value: f64,
    },

    #[error("break date {date} outside panel range {first}..={last}")]
    BreakOutOfRange {
        date: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("design matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate regression: {0}")]
    Degenerate(String),

    #[error("equation {equation}: quantile solver did not converge after {iterations} iterations")]
    NotConverged { equation: usize, iterations: usize },

    #[error("frequency band {0:?} contains no grid points")]
    EmptyBand(String),

    #[error("malformed connectedness matrix: {0}")]
    Malformed(String),

    #[error("dates are not aligned: {0}")]
    Misaligned(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
