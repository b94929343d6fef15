use crate::hash::Hash;
use crate::time::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("node not found: {0}")]
    NotFound(Hash),
    #[error("edge not found: {0}")]
    EdgeNotFound(Hash),
    #[error("merge proposal not found: {0}")]
    ProposalNotFound(Hash),
    #[error("dangling child reference: {0}")]
    DanglingChild(Hash),
    #[error("dangling edge reference: {0}")]
    DanglingEdge(Hash),
    #[error("dangling edge endpoint: {0}")]
    DanglingEndpoint(Hash),
    #[error("node {child} already belongs to world {parent}")]
    AlreadyParented { child: Hash, parent: Hash },
    #[error("integrity violation: stored blob does not hash to {0}")]
    IntegrityViolation(Hash),
    #[error("edit leaves every hashed field unchanged")]
    NoOpEdit,
    #[error("close time {at} precedes t_valid.from {from}")]
    BeforeValidFrom { at: Timestamp, from: Timestamp },
    #[error("invalid validity interval: to {to} precedes from {from}")]
    InvalidInterval { from: Timestamp, to: Timestamp },
    #[error("unregistered edge type: {0}")]
    UnregisteredEdgeType(String),
    #[error("edge type already registered: {0}")]
    DuplicateEdgeType(String),
    #[error("handler refused {edge_type} edge: {reason}")]
    HandlerRefused { edge_type: String, reason: String },
    #[error("merge proposal {0} is not pending")]
    NotPending(Hash),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("missing embedding for {0}")]
    MissingEmbedding(Hash),
    #[error("composed vector has zero norm")]
    ZeroNormResult,
    #[error("empty name")]
    EmptyName,
    #[error("invalid extraction: {0}")]
    InvalidExtraction(String),
    #[error("unknown seed: {0}")]
    UnknownSeed(Hash),
    #[error("query start set is empty")]
    EmptyStartSet,
    #[error("query spec names no seeds, text, or vector")]
    EmptySpec,
    #[error("query parse error: {0}")]
    Parse(String),
    #[error("invalid hash: {0}")]
    InvalidHash(String),
    #[error("unknown scope: {0}")]
    UnknownScope(String),
    #[error("memory text is empty")]
    EmptyText,
    #[error("at least one scope is required")]
    EmptyScopes,
    #[error("prefix {0} matches more than one node")]
    AmbiguousPrefix(String),
    #[error("no node matches {0}")]
    NoMatch(String),
    #[error("prefix {0} is shorter than 4 characters")]
    PrefixTooShort(String),
    #[error("operation requires explicit confirmation")]
    ConfirmationRequired,
    #[error("summarizer failed: {0}")]
    Summarizer(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("codec: {0}")]
    Codec(#[from] bincode::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[cfg(feature = "fault-injection")]
    #[error("injected fault")]
    InjectedFault,
}
