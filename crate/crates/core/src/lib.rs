//! Content-addressed graph of nested worlds for agent memory.
//!
//! Nodes and edges are immutable and identified by blake3 hashes of their
//! canonical encodings. Every edge write is dispatched through the handler
//! registered for its type. Entity resolution, vector composition, a
//! pipeline query engine, rank fusion retrieval, background consolidation
//! and an agent memory tool surface sit on top of [`Engine`].

pub mod composer;
pub mod consolidator;
pub mod embed;
pub mod engine;
pub mod error;
pub mod fusion;
pub mod handlers;
pub mod hash;
pub mod lexical;
pub mod memory;
pub mod model;
pub mod query;
pub mod reconciler;
pub mod resolver;
pub mod store;
pub mod time;
pub mod vector;

pub use composer::ComposeMode;
pub use engine::{EdgeOutcome, Engine, EngineConfig, ReclusterMode};
pub use error::{Error, Result};
pub use hash::{compute_edge_id, compute_node_id, Hash};
pub use memory::{MemoryService, Scope, ScopeKind};
pub use model::{
    Edge, EdgeDraft, EdgeStatus, EdgeType, MergeProposal, Node, NodeDraft, NodeType, ProposalStatus, Source, Tier,
};
pub use reconciler::{CandidateEdge, CandidateNode, Extraction, IngestReport, NodeRef};
pub use resolver::{Candidate, Match, Resolution, Thresholds};
pub use time::{Clock, ManualClock, SystemClock, Timestamp, ValidityInterval};
