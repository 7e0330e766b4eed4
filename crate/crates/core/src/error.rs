//! Error type shared across the pipeline.

/// Errors produced by dataset handling, model training and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// CSV header is missing a required column.
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    /// Schema definition or schema/data mismatch.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Not enough data to perform the operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// No grid portfolio satisfies the variance cap.
    #[error(
        "infeasible: no portfolio satisfies variance cap {beta}; \
         minimum achievable variance is {min_variance}"
    )]
    Infeasible { beta: f64, min_variance: f64 },

    /// Exact search exceeded its node budget.
    #[error(
        "search budget exceeded: {evaluated} weightings evaluated (budget {budget}); \
         use the greedy/heuristic solver for this instance"
    )]
    BudgetExceeded { evaluated: u64, budget: u64 },

    /// Serialized model has an unsupported format version.
    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
