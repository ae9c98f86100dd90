use std::path::PathBuf;

use crate::numerics::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got {0}")]
    NotScalar(Shape),

    #[error("backward already ran on this graph; call reset_grads before running it again")]
    AlreadyBackpropagated,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Cell {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: timestamp gap after {after}: expected {expected}, found {found}")]
    Gap {
        path: String,
        after: chrono::NaiveDateTime,
        expected: chrono::NaiveDateTime,
        found: chrono::NaiveDateTime,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("training diverged at epoch {} (non-finite loss)", .0.diverged_epoch.unwrap_or_default())]
    Diverged(Box<crate::harness::ExperimentRecord>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn shape_mismatch(op: &'static str, lhs: Shape, rhs: Shape) -> Self {
        Error::ShapeMismatch { op, lhs, rhs }
    }
}
