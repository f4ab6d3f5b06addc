use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AceError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the process exit code the CLI maps them to, see
/// [`AceError::exit_code`].
#[derive(Debug, Error)]
pub enum AceError {
    // labels and trees
    #[error("malformed label {0:?}")]
    MalformedLabel(String),
    #[error("node {node:?} not found in tree rooted at {root:?}")]
    NodeNotFound { root: String, node: String },
    #[error("empty shadow-negative pool for action {0:?}")]
    EmptyNegativePool(String),
    #[error("invalid synonym tree: {0}")]
    InvalidTree(String),

    // language-model client
    #[error("unknown prompt template {0:?}")]
    TemplateNotFound(String),
    #[error("synonym service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("malformed synonym response: {0}")]
    MalformedResponse(String),

    // encoders and numerics
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },
    #[error("cannot normalize a zero-norm vector")]
    NormalizationError,
    #[error("non-finite value: {0}")]
    NumericsError(String),

    // configuration
    #[error("configuration error: {0}")]
    ConfigError(String),

    // checkpoints
    #[error("checkpoint checksum mismatch in {0}")]
    ChecksumError(PathBuf),
    #[error("checkpoint vocabulary hash {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },

    // evaluation
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("label table mismatch: {0}")]
    LabelTableMismatch(String),

    // ingestion
    #[error("ingest error for {path}: {reason}")]
    IngestError { path: PathBuf, reason: String },
    #[error("schema error: {0}")]
    SchemaError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AceError {
    /// Process exit code: 2 usage/config, 3 ingest/schema, 4 numerics,
    /// 5 external service, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use AceError::*;
        match self {
            ConfigError(_) | TemplateNotFound(_) => 2,
            MalformedLabel(_)
            | NodeNotFound { .. }
            | EmptyNegativePool(_)
            | InvalidTree(_)
            | IngestError { .. }
            | SchemaError(_)
            | LabelTableMismatch(_)
            | ChecksumError(_)
            | VocabMismatch { .. }
            | EmptyEvalSet
            | Json(_)
            | Csv(_) => 3,
            ShapeError { .. } | NormalizationError | NumericsError(_) => 4,
            ServiceUnavailable(_) | MalformedResponse(_) => 5,
            Io(_) => 1,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> AceError {
    AceError::ConfigError(msg.into())
}
