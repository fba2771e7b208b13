//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the estimation pipeline, generators and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("cannot parse cell at data row {row}, column {col}: {value:?}")]
    ParseCell { row: usize, col: usize, value: String },

    #[error("ragged csv: data row {row} has {got} fields, expected {expected}")]
    RaggedRow { row: usize, expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: String, expected: String, got: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite: {context}")]
    NotPositiveDefinite { context: String },

    #[error("matrix is singular: {context}")]
    Singular { context: String },

    #[error("inverse residual {residual:e} exceeds 1e-8 for {context}")]
    InverseResidual { context: String, residual: f64 },

    #[error("degenerate mixture component {component}: effective count {effective_count:e}")]
    DegenerateComponent { component: usize, effective_count: f64 },

    #[error("responsibility underflow on row {row}: all components vanish")]
    ResponsibilityUnderflow { row: usize },

    #[error("log-likelihood decreased by {drop:e} at iteration {iteration}; this is a bug")]
    LikelihoodDecreased { iteration: usize, drop: f64 },

    #[error("need at least as many rows as components: n = {n}, k = {k}")]
    TooFewRows { n: usize, k: usize },

    #[error("non-identifiable fit: {0}")]
    NonIdentifiable(String),

    #[error("online update failed at observation {step}: {source}")]
    OnlineStep { step: usize, source: Box<Error> },

    #[error("estimator failed in {failures}/{trials} trials (>{permitted_pct}%); first failure: {first}")]
    EstimatorFailures { failures: usize, trials: usize, permitted_pct: u8, first: String },

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("method {method:?} does not apply to the {pipeline} pipeline")]
    MethodPipelineMismatch { method: String, pipeline: String },

    #[error("sweep cell {sweep_value} aborted: {failures}/{trials} trials failed; first failure: {first}")]
    SweepCellAborted { sweep_value: f64, failures: usize, trials: usize, first: String },

    #[error("invalid experiment config: {0}")]
    Config(String),
}

impl Error {
    /// Convenience constructor for validation failures.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(context: &str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
