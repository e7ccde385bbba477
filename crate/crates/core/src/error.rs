use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The variants map onto the CLI exit codes: configuration problems are
/// usage errors, model/parameter problems are model errors, and the rest
/// are numerical failures.
#[derive(Debug, Error)]
pub enum AdrlError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("evaluation error at t={t} (state {state:?}): {msg}")]
    Evaluation { t: usize, state: Vec<f64>, msg: String },

    #[error("infeasible actions: max constraint violation {max_violation:e}")]
    Feasibility { max_violation: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AdrlError {
    pub fn config(msg: impl Into<String>) -> Self {
        AdrlError::Config(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        AdrlError::Model(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        AdrlError::Parameter(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        AdrlError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, AdrlError>;
