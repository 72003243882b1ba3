use thiserror::Error;

/// Errors produced by the identification engine.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("zero vector: {modality} embedding has norm below 1e-12")]
    ZeroVector { modality: &'static str },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("unknown identity '{label}' (auto-register disabled)")]
    UnknownIdentity { label: String },

    #[error("knowledge store is empty")]
    EmptyStore,

    #[error("shape mismatch: {message}")]
    ShapeMismatch { message: String },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("length mismatch: {left} predictions vs {right} ground-truth labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("class '{label}' has no training examples")]
    EmptyClass { label: String },

    #[error("identity '{label}' already covered by an existing branch")]
    OverlappingIds { label: String },

    #[error("invalid population spec: {message}")]
    InvalidSpec { message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Stable machine-readable tag, used by the HTTP layer and exit-code mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::ZeroVector { .. } => "zero_vector",
            EngineError::DimensionMismatch { .. } => "dimension_mismatch",
            EngineError::NonFinite { .. } => "non_finite",
            EngineError::UnknownIdentity { .. } => "unknown_identity",
            EngineError::EmptyStore => "empty_store",
            EngineError::ShapeMismatch { .. } => "shape_mismatch",
            EngineError::IndexOutOfRange { .. } => "index_out_of_range",
            EngineError::Parse { .. } => "parse",
            EngineError::LengthMismatch { .. } => "length_mismatch",
            EngineError::EmptyInput => "empty_input",
            EngineError::EmptyClass { .. } => "empty_class",
            EngineError::OverlappingIds { .. } => "overlapping_ids",
            EngineError::InvalidSpec { .. } => "invalid_spec",
            EngineError::Io(_) => "io",
        }
    }

    /// Line number for parse errors, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            EngineError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}
