//! Node, edge and merge-proposal types.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::Hash;
use crate::time::{Timestamp, ValidityInterval};

macro_rules! string_kind {
    ($(#[$meta:meta])* $name:ident { $($konst:ident = $lit:literal),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Cow<'static, str>);

        impl $name {
            $(pub const $konst: $name = $name(Cow::Borrowed($lit));)*

            pub fn new(name: impl Into<String>) -> Self {
                $name(Cow::Owned(name.into()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name::new(s)
            }
        }
    };
}

string_kind! {
    /// Node type vocabulary. Open-ended: any string is a valid type.
    NodeType {
        ENTITY = "Entity",
        EVENT = "Event",
        DECISION = "Decision",
        TOPIC = "Topic",
        SUMMARY = "Summary",
        SCOPE = "Scope",
        FACT = "Fact",
        TURN = "Turn",
    }
}

string_kind! {
    /// Edge type. Every type must have a registered handler before use.
    EdgeType {
        CONTAINS = "contains",
        REFERS_TO = "refers_to",
        SUPERSEDES = "supersedes",
        SAME_AS = "same_as",
        CONTRADICTS = "contradicts",
        IMPLIES = "implies",
        DERIVED_FROM = "derived_from",
        INSTANCE_OF = "instance_of",
        SUBTYPE_OF = "subtype_of",
        CAUSES = "causes",
        PRECEDES = "precedes",
    }
}

impl EdgeType {
    pub fn defaults() -> [EdgeType; 11] {
        [
            EdgeType::CONTAINS,
            EdgeType::REFERS_TO,
            EdgeType::SUPERSEDES,
            EdgeType::SAME_AS,
            EdgeType::CONTRADICTS,
            EdgeType::IMPLIES,
            EdgeType::DERIVED_FROM,
            EdgeType::INSTANCE_OF,
            EdgeType::SUBTYPE_OF,
            EdgeType::CAUSES,
            EdgeType::PRECEDES,
        ]
    }
}

/// Where a fact came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Source {
    /// Session id, document id or tool-call id.
    pub origin: String,
    #[serde(default)]
    pub span: Option<(u64, u64)>,
    pub recorded_at: Timestamp,
}

impl Source {
    pub fn new(origin: impl Into<String>, recorded_at: Timestamp) -> Self {
        Self { origin: origin.into(), span: None, recorded_at }
    }
}

/// A stored node with its mutable projection fields merged in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: Hash,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub name: String,
    pub content: String,
    pub children: Vec<Hash>,
    pub edges: Vec<Hash>,
    pub created_at: Timestamp,
    /// Effective embedding (composed for worlds, content anchor otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    pub provenance: Vec<Source>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    pub t_valid: ValidityInterval,
    pub t_ingested: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_world: Option<Hash>,
    /// Number of live `contradicts` edges touching this node.
    #[serde(default)]
    pub conflicts: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty() && self.edges.is_empty()
    }
}

/// Everything needed to put a node; the id is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDraft {
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub name: String,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub children: Vec<Hash>,
    #[serde(default)]
    pub edges: Vec<Hash>,
    /// Defaults to the engine clock at put time.
    #[serde(default)]
    pub created_at: Option<Timestamp>,
    /// Defaults to `[created_at, open)`.
    #[serde(default)]
    pub t_valid: Option<ValidityInterval>,
    #[serde(default)]
    pub provenance: Vec<Source>,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
}

impl NodeDraft {
    pub fn new(node_type: impl Into<NodeType>, name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            node_type: node_type.into(),
            name: name.into(),
            content: content.into(),
            children: Vec::new(),
            edges: Vec::new(),
            created_at: None,
            t_valid: None,
            provenance: Vec::new(),
            aliases: Vec::new(),
            embedding: None,
        }
    }

    pub fn children(mut self, children: impl IntoIterator<Item = Hash>) -> Self {
        self.children = children.into_iter().collect();
        self
    }

    pub fn edges(mut self, edges: impl IntoIterator<Item = Hash>) -> Self {
        self.edges = edges.into_iter().collect();
        self
    }

    pub fn created_at(mut self, at: Timestamp) -> Self {
        self.created_at = Some(at);
        self
    }

    pub fn valid(mut self, t_valid: ValidityInterval) -> Self {
        self.t_valid = Some(t_valid);
        self
    }

    pub fn valid_from(mut self, from: Timestamp) -> Self {
        self.t_valid = Some(ValidityInterval::open(from));
        self
    }

    pub fn source(mut self, source: Source) -> Self {
        self.provenance.push(source);
        self
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.aliases.push(alias.into());
        self
    }

    pub fn embedding(mut self, v: Vec<f32>) -> Self {
        self.embedding = Some(v);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeStatus {
    Live,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: Hash,
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub src: Hash,
    pub dst: Hash,
    pub t_valid: ValidityInterval,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub status: EdgeStatus,
    pub t_ingested: Timestamp,
}

impl Edge {
    /// Live status and validity not closed at `now`.
    pub fn is_live_at(&self, now: Timestamp) -> bool {
        self.status == EdgeStatus::Live && !self.t_valid.is_closed_at(now)
    }

    pub fn other(&self, end: &Hash) -> Hash {
        if &self.src == end {
            self.dst
        } else {
            self.src
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }
}

/// An edge to be written. The id is derived from the fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDraft {
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub src: Hash,
    pub dst: Hash,
    /// Defaults to `[now, open)`.
    #[serde(default)]
    pub t_valid: Option<ValidityInterval>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl EdgeDraft {
    pub fn new(edge_type: impl Into<EdgeType>, src: Hash, dst: Hash) -> Self {
        Self { edge_type: edge_type.into(), src, dst, t_valid: None, metadata: BTreeMap::new() }
    }

    pub fn valid_from(mut self, from: Timestamp) -> Self {
        self.t_valid = Some(ValidityInterval::open(from));
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// Resolver tier that produced a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Exact,
    Fuzzy,
    Phonetic,
    Embedding,
    Tiebreaker,
    /// A `same_as` edge written directly rather than by the resolver.
    Manual,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Exact => "exact",
            Tier::Fuzzy => "fuzzy",
            Tier::Phonetic => "phonetic",
            Tier::Embedding => "embedding",
            Tier::Tiebreaker => "tiebreaker",
            Tier::Manual => "manual",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        Some(match s {
            "exact" => Tier::Exact,
            "fuzzy" => Tier::Fuzzy,
            "phonetic" => Tier::Phonetic,
            "embedding" => Tier::Embedding,
            "tiebreaker" => Tier::Tiebreaker,
            "manual" => Tier::Manual,
            _ => return None,
        })
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Accepted,
    Rejected,
}

/// A staged `same_as` identity claim. Its id is the id of the staged edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeProposal {
    pub id: Hash,
    pub left: Hash,
    pub right: Hash,
    pub status: ProposalStatus,
    pub staged_at: Timestamp,
    pub origin_tier: Tier,
    #[serde(default)]
    pub decided_at: Option<Timestamp>,
}

/// Unordered pair key.
pub fn pair_key(a: Hash, b: Hash) -> (Hash, Hash) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
