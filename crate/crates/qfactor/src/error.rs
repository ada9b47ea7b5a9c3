//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by panel validation, estimation, and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} contains a non-finite value")]
    NonFinite { what: String },

    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("invalid {name} = {value}: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("characteristic {index} is degenerate: fewer than two distinct values")]
    DegenerateCovariate { index: usize },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("oracle solver limited to n <= {max_n}, p <= {max_p}; got n = {n}, p = {p}")]
    OracleTooLarge {
        n: usize,
        p: usize,
        max_n: usize,
        max_p: usize,
    },

    #[error("oracle solver found no non-singular basic solution")]
    OracleNoBasis,

    #[error("loading {index} is unidentified: empirical normalizer {normalizer:.3e} is numerically zero")]
    UnidentifiedLoading { index: usize, normalizer: f64 },

    #[error("null loading {index}: stored normalizer is numerically zero")]
    NullLoading { index: usize },

    #[error("period regression is underdetermined: {parameters} parameters but only {observations} units")]
    Underdetermined {
        parameters: usize,
        observations: usize,
    },

    #[error("{what} is singular{}", condition.map(|c| format!(" (condition number {c:.3e})")).unwrap_or_default())]
    SingularMatrix {
        what: String,
        condition: Option<f64>,
    },

    #[error("period {period} estimation failed: {source}")]
    PeriodEstimation {
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("every knot-count candidate failed; last error: {last}")]
    KnotSelectionFailed { last: Box<Error> },

    #[error("critical-value table mismatch: {what} (table has {table}, request wants {requested})")]
    TableMismatch {
        what: &'static str,
        table: String,
        requested: String,
    },

    #[error("unsupported model file: schema {schema:?} version {version}")]
    UnsupportedSchema { schema: String, version: u32 },

    #[error("simulation design invalid: {reason}")]
    InvalidDesign { reason: String },

    #[error("rate study needs at least two distinct panel sizes")]
    RateStudyDegenerate,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
