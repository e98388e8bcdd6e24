//! Error type shared across the crate.

use thiserror::Error;

/// All failures surfaced by the library.
///
/// Variants are grouped so a caller can map them to coarse exit codes:
/// [`Error::is_data_error`] covers malformed inputs (bad CSV, bad queries,
/// schema mismatches), everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv error at line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("label column '{0}' missing")]
    MissingLabel(String),

    #[error("label column '{column}' is non-binary: '{value}' at line {line}")]
    NonBinaryLabel {
        column: String,
        value: String,
        line: u64,
    },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("non-primitive query: '{token}' at byte {offset}")]
    NonPrimitive { token: String, offset: usize },

    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),

    #[error("duplicate predicate on attribute '{0}'")]
    DuplicateAttribute(String),

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("attribute '{0}' has no binning rule")]
    MissingBinning(String),

    #[error("labels contain a single class; both classes are required")]
    SingleClass,

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("unknown table '{0}'")]
    UnknownTable(String),

    #[error("duplicate table '{0}'")]
    DuplicateTable(String),

    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("model/schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("wire protocol error: {0}")]
    Protocol(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the user's data or query rather than the
    /// runtime environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Csv { .. }
                | Error::MissingLabel(_)
                | Error::NonBinaryLabel { .. }
                | Error::Parse { .. }
                | Error::NonPrimitive { .. }
                | Error::UnknownAttribute(_)
                | Error::DuplicateAttribute(_)
                | Error::TypeMismatch(_)
                | Error::MissingBinning(_)
                | Error::SingleClass
                | Error::UnknownTable(_)
                | Error::DuplicateTable(_)
                | Error::UnknownTask(_)
                | Error::SchemaMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
