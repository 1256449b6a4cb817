use thiserror::Error;

/// Errors produced by the correlation, baseline and solver routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} of the loadings has squared norm {norm_sq} > 1")]
    RowNormViolation { row: usize, norm_sq: f64 },

    #[error("invalid market specification: {0}")]
    InvalidMarket(String),

    #[error("constraint index {index} out of range ({count} constraints)")]
    ConstraintIndex { index: usize, count: usize },

    #[error("expected exactly one market constraint, got {0}")]
    UnsupportedConstraintCount(usize),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("constraint insensitive to X")]
    ConstraintInsensitive,

    #[error("restoration did not converge after {iterations} iterations (|g| = {residual:e})")]
    RestorationFailed { iterations: usize, residual: f64 },

    #[error("constraint unreachable from X_P (discriminant {discriminant:e})")]
    Unreachable { discriminant: f64 },

    #[error("column {column} is linearly dependent on the preceding columns")]
    RankDeficient { column: usize },

    #[error("VG skew term exceeds index variance (adjusted target {adjusted:e})")]
    VgSkewExceedsVariance { adjusted: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("requested {k} factors for {n} assets")]
    TooManyFactors { k: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
