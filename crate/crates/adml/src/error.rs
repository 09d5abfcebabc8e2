//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AdmlError>;

/// Everything that can go wrong while loading data, building patches,
/// solving subset problems, or aggregating them.
#[derive(Debug, Error)]
pub enum AdmlError {
    #[error("row {line}: expected {expected} fields, got {got}")]
    MalformedRow {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("row {line}, feature column {column}: not a finite number: {token:?}")]
    NonNumericFeature {
        line: usize,
        column: usize,
        token: String,
    },

    #[error("file has no data rows")]
    EmptyFile,

    #[error("invalid subset count {k} for {n} samples")]
    InvalidK { k: usize, n: usize },

    #[error("sample {center} has no other-class sample in its subset")]
    NoBetweenClass { center: usize },

    #[error("subset {subset} cannot train a discriminative metric")]
    SubsetDegenerate { subset: usize },

    #[error("bad dimension: {msg}")]
    BadDimension { msg: String },

    #[error("Gram matrix condition {cond:.3e} exceeds 1e12; increase ridge")]
    GramIllConditioned { cond: f64 },

    #[error("shape mismatch: {msg}")]
    ShapeMismatch { msg: String },

    #[error("aggregate scatter is numerically singular (sigma_min {sigma_min:.3e} vs sigma_max {sigma_max:.3e}); use the SVD aggregation instead")]
    SingularAggregate { sigma_min: f64, sigma_max: f64 },

    #[error("aggregate of weighted bases is zero")]
    ZeroAggregate,

    #[error("dense scatter required but not collected (dimension above the dense cap?)")]
    MissingDense,

    #[error("reference set is empty")]
    EmptyReference,

    #[error("matrix columns not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("malformed worker-result bytes: {0}")]
    MalformedWire(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl AdmlError {
    /// Stable short name of the error kind, for diagnostics and scripts.
    pub fn code(&self) -> &'static str {
        match self {
            AdmlError::MalformedRow { .. } => "MalformedRow",
            AdmlError::NonNumericFeature { .. } => "NonNumericFeature",
            AdmlError::EmptyFile => "EmptyFile",
            AdmlError::InvalidK { .. } => "InvalidK",
            AdmlError::NoBetweenClass { .. } => "NoBetweenClass",
            AdmlError::SubsetDegenerate { .. } => "SubsetDegenerate",
            AdmlError::BadDimension { .. } => "BadDimension",
            AdmlError::GramIllConditioned { .. } => "GramIllConditioned",
            AdmlError::ShapeMismatch { .. } => "ShapeMismatch",
            AdmlError::SingularAggregate { .. } => "SingularAggregate",
            AdmlError::ZeroAggregate => "ZeroAggregate",
            AdmlError::MissingDense => "MissingDense",
            AdmlError::EmptyReference => "EmptyReference",
            AdmlError::NotOrthonormal { .. } => "NotOrthonormal",
            AdmlError::MalformedModel(_) => "MalformedModel",
            AdmlError::MalformedWire(_) => "MalformedWire",
            AdmlError::Io(_) => "Io",
            AdmlError::Csv(_) => "Csv",
        }
    }
}
