use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("csv error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("training diverged at epoch {epoch} (last finite epoch {last_finite:?})")]
    Diverged { epoch: usize, last_finite: Option<usize> },

    #[error("no constraint weight reached feasibility; closest residual {closest_residual:.4}")]
    Infeasible { closest_residual: f64 },

    #[error("ground truth required but not available")]
    MissingTruth,

    #[error("model is not fitted")]
    NotFitted,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
