//! Error type shared across the engine.

use thiserror::Error;

/// All failure modes surfaced by engine operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate unit: digest {0} already ingested")]
    DuplicateUnit(String),
    #[error("invalid unit: {0}")]
    InvalidUnit(String),
    #[error("unknown unit id {0}")]
    UnknownUnit(u64),
    #[error("unknown node id {0}")]
    UnknownNode(u64),
    #[error("unknown edge id {0}")]
    UnknownEdge(u64),
    #[error("edge {0} is a classification edge; operation requires an event edge")]
    WrongEdgeKind(u64),
    #[error("node {0} has tier {1}; operation requires an abstract node")]
    WrongTier(u64, String),
    #[error("classification edge would violate tier ordering: {0}")]
    TierViolation(String),
    #[error("empty session: {0}")]
    EmptySession(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("backend output failed schema validation: {0}")]
    SchemaViolation(String),
    #[error("duplicate document {0} in corpus {1}")]
    DuplicateDoc(u64, String),
    #[error("unknown document {0} in corpus {1}")]
    UnknownDoc(u64, String),
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for backend trouble, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BackendFailure(_) | Error::SchemaViolation(_) => 2,
            _ => 1,
        }
    }
}
