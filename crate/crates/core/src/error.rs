use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every matchlab operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("unknown sample id `{0}`")]
    UnknownId(String),

    #[error("objective returned a non-finite value")]
    NonFiniteObjective,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("fold {0} is degenerate (empty or single-class training/test split)")]
    FoldDegenerate(usize),

    #[error("no valid reference for sample `{0}`")]
    NoValidReference(String),

    #[error("only {available} candidates available, {requested} requested")]
    InsufficientCandidates { requested: usize, available: usize },

    #[error("invalid count: {successes} successes out of {n}")]
    InvalidCount { successes: u64, n: u64 },

    #[error("group {0} is empty")]
    EmptyGroup(u8),

    #[error("covariate `{0}` is not binary")]
    NonBinaryCovariate(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("rows are linearly dependent (row {0})")]
    RankDeficient(usize),

    #[error("zero edit direction for attribute {0}")]
    ZeroDirection(usize),

    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("pair ({0}, {1}) has no references")]
    MissingReference(String, String),

    #[error("correlation matrix is not positive semidefinite")]
    NotPsd,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse { context: context.into(), message: message.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch { expected: expected.to_string(), found: found.to_string() }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
