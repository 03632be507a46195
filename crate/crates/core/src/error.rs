use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: file contains no price records")]
    EmptyFile { path: PathBuf },

    #[error("asset {asset}: non-positive or non-finite price {price} at row {row} (timestamp {timestamp})")]
    NonPositivePrice {
        asset: String,
        row: usize,
        timestamp: i64,
        price: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("price overlap of {rows} rows is shorter than the required {required}")]
    InsufficientOverlap { rows: usize, required: usize },

    #[error("period {period} min is not a positive multiple of the base period {base} min")]
    InvalidPeriod { period: u32, base: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("lag {lag} leaves no overlap in {rows} rows")]
    LagTooLarge { lag: usize, rows: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("activation record does not belong to the current parameters")]
    StaleTrace,

    #[error("unknown {kind}: {name}")]
    Unknown { kind: &'static str, name: String },

    #[error("no usable window end dates ({skipped} skipped)")]
    NoUsableDates { skipped: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
