//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by geometry, privacy accounting, and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Input contained a NaN or infinite value.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: {left_name} has dimension {left} but {right_name} has dimension {right}")]
    DimensionMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },

    /// A scalar or structural parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A local neighborhood is too small to estimate geometry.
    #[error("insufficient neighbors: found {found}, need at least {needed}")]
    InsufficientNeighbors { found: usize, needed: usize },

    /// A weighted summary was requested over an empty support.
    #[error("empty kernel support: no reference point carries positive weight")]
    EmptySupport,

    /// Privacy ledger guard: a spend would exceed the remaining budget.
    #[error("privacy budget exhausted: requested {requested:.6e}, remaining {remaining:.6e}")]
    BudgetExhausted { requested: f64, remaining: f64 },

    /// The nearest-point projection is undefined at the input (reach violation).
    #[error("ambiguous projection: {0}")]
    AmbiguousProjection(String),

    /// Malformed on-disk data.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
