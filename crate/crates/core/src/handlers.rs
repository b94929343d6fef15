//! Edge-type handlers and the registry that binds them to type names.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::model::{Edge, EdgeStatus, EdgeType, Tier};
use crate::store::Txn;

/// Metadata key that carries the resolver tier on staged `same_as` edges.
pub const TIER_KEY: &str = "tier";

/// Per-query effects contributed by handlers for edges touching a result.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct QueryRewrite {
    /// Nodes to surface with a conflict marker.
    pub conflict_flags: BTreeSet<Hash>,
    /// Nodes the view should hide.
    pub hidden: BTreeSet<Hash>,
}

/// Write-time semantics for one edge type. `on_insert` runs inside the
/// transaction that inserts the edge row; returning an error aborts both.
pub trait EdgeHandler: Send + Sync {
    fn on_insert(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        let _ = (tx, edge);
        Ok(())
    }

    fn on_delete(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        let _ = (tx, edge);
        Ok(())
    }

    fn on_query_rewrite(&self, edge: &Edge, rewrite: &mut QueryRewrite) {
        let _ = (edge, rewrite);
    }
}

fn refuse(edge: &Edge, reason: impl Into<String>) -> Error {
    Error::HandlerRefused { edge_type: edge.edge_type.to_string(), reason: reason.into() }
}

/// Stores the edge and does nothing else.
#[derive(Debug, Default, Clone, Copy)]
pub struct Passive;

impl EdgeHandler for Passive {}

/// Closes the target's validity at the edge's `t_valid.from`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Supersedes;

impl EdgeHandler for Supersedes {
    fn on_insert(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        if edge.src == edge.dst {
            return Err(refuse(edge, "a node cannot supersede itself"));
        }
        let target = tx.row(&edge.dst).ok_or(Error::DanglingEndpoint(edge.dst))?;
        if edge.t_valid.from < target.t_valid.from {
            return Err(refuse(edge, "supersession time precedes the target's validity"));
        }
        tx.close_node_validity(edge.dst, edge.t_valid.from)?;
        Ok(())
    }
}

/// Stages a pending merge proposal; never merges.
#[derive(Debug, Default, Clone, Copy)]
pub struct SameAs;

impl EdgeHandler for SameAs {
    fn on_insert(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        if edge.src == edge.dst {
            return Err(refuse(edge, "identity with itself is implicit"));
        }
        let st = tx.state();
        if st.is_negative(edge.src, edge.dst) {
            return Err(refuse(edge, "pair was rejected before"));
        }
        if st.pair_settled(edge.src, edge.dst) {
            return Err(refuse(edge, "pair already has a pending or accepted proposal"));
        }
        let tier = edge.meta(TIER_KEY).and_then(Tier::parse).unwrap_or(Tier::Manual);
        tx.stage_proposal(edge, tier)
    }
}

/// Marks both endpoints as conflicting; deletes and closes nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct Contradicts;

impl EdgeHandler for Contradicts {
    fn on_insert(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        if edge.src == edge.dst {
            return Err(refuse(edge, "a node cannot contradict itself"));
        }
        tx.adjust_conflicts(edge.src, 1)?;
        tx.adjust_conflicts(edge.dst, 1)
    }

    fn on_delete(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        tx.adjust_conflicts(edge.src, -1)?;
        tx.adjust_conflicts(edge.dst, -1)
    }

    fn on_query_rewrite(&self, edge: &Edge, rewrite: &mut QueryRewrite) {
        if edge.status == EdgeStatus::Live {
            rewrite.conflict_flags.insert(edge.src);
            rewrite.conflict_flags.insert(edge.dst);
        }
    }
}

/// For relations that hold one value at a time (employment, ownership):
/// a new edge closes the validity of earlier open edges of the same type
/// from the same source.
#[derive(Debug, Default, Clone, Copy)]
pub struct ClosePriorEdges;

impl EdgeHandler for ClosePriorEdges {
    fn on_insert(&self, tx: &mut Txn<'_>, edge: &Edge) -> Result<()> {
        for id in tx.out_edge_ids(&edge.src) {
            let Some(prior) = tx.edge(&id) else { continue };
            if prior.edge_type != edge.edge_type
                || prior.status != EdgeStatus::Live
                || !prior.t_valid.is_open()
                || prior.t_valid.from > edge.t_valid.from
            {
                continue;
            }
            tx.close_edge_validity(id, edge.t_valid.from)?;
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Registration {
    pub handler: Arc<dyn EdgeHandler>,
    pub functional: bool,
}

impl fmt::Debug for Registration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registration").field("functional", &self.functional).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    entries: BTreeMap<EdgeType, Registration>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// The eleven built-in types.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        for t in EdgeType::defaults() {
            let handler: Arc<dyn EdgeHandler> = match t.as_str() {
                "supersedes" => Arc::new(Supersedes),
                "same_as" => Arc::new(SameAs),
                "contradicts" => Arc::new(Contradicts),
                _ => Arc::new(Passive),
            };
            r.entries.insert(t, Registration { handler, functional: false });
        }
        r
    }

    pub fn register(&mut self, name: EdgeType, handler: Arc<dyn EdgeHandler>, functional: bool) -> Result<()> {
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateEdgeType(name.to_string()));
        }
        self.entries.insert(name, Registration { handler, functional });
        Ok(())
    }

    pub fn get(&self, name: &EdgeType) -> Option<Registration> {
        self.entries.get(name).cloned()
    }

    pub fn contains(&self, name: &EdgeType) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &EdgeType> {
        self.entries.keys()
    }

    pub fn functional_types(&self) -> BTreeSet<EdgeType> {
        self.entries.iter().filter(|(_, r)| r.functional).map(|(t, _)| t.clone()).collect()
    }
}
