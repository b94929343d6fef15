//! Tables, derived indexes and the write transaction.
//!
//! Every mutation goes through [`Txn`], which applies changes in place and
//! keeps an undo log. Dropping a transaction without committing rolls every
//! change back. The edge-row insert is private to this module and is reached
//! only from [`Txn::write_edge`] after handler dispatch.

pub mod journal;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::BuildHasherDefault;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::Inner;
use crate::error::{Error, Result};
use crate::handlers::Registry;
use crate::hash::{compute_edge_id, CanonicalNode, Hash};
use crate::lexical::LexicalIndex;
use crate::model::{
    pair_key, Edge, EdgeDraft, EdgeStatus, EdgeType, MergeProposal, Node, NodeDraft, NodeType, ProposalStatus,
    Source, Tier,
};
use crate::resolver::similarity::{blocking_keys, phonetic_key};
use crate::time::{Timestamp, ValidityInterval};
use crate::vector::{normalized, EmbeddingRecord, HnswParams, VectorIndex};

use journal::Record;

/// Hash map with a fixed hasher so iteration order is reproducible.
pub type Map<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;
pub type Set<K> = HashSet<K, BuildHasherDefault<DefaultHasher>>;

pub const ROLE: &str = "role";
pub const ROLE_SUMMARY: &str = "summary";

/// Mutable projection row for a node. The hashed fields are duplicated from
/// the blob for fast reads; verified reads go back to the blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node_type: NodeType,
    pub name: String,
    pub content: String,
    pub children: Vec<Hash>,
    pub edges: Vec<Hash>,
    pub created_at: Timestamp,
    pub t_valid: ValidityInterval,
    pub t_ingested: Timestamp,
    pub parent_world: Option<Hash>,
    pub provenance: Vec<Source>,
    pub aliases: Vec<String>,
    pub conflicts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Idx {
    Names,
    Blocking,
    Phonetic,
}

#[derive(Debug)]
enum Undo {
    Blob(Hash),
    Node(Hash, Option<NodeRow>),
    EdgeInsert(Hash),
    Edge(Edge),
    Proposal(Hash, Option<MergeProposal>),
    PairPush((Hash, Hash)),
    Negative((Hash, Hash)),
    Identity(Hash, Hash),
    Embedding(Hash, Option<EmbeddingRecord>),
    IndexPush(Idx, String),
    TypePush(NodeType),
}

#[derive(Debug, Default)]
pub(crate) struct Dirty {
    pub nodes: Vec<Hash>,
    pub node_set: Set<Hash>,
    pub new_nodes: Vec<Hash>,
    pub edges: Vec<Hash>,
    pub edge_set: Set<Hash>,
    pub new_edges: Vec<Hash>,
    pub proposals: Vec<Hash>,
    pub proposal_set: Set<Hash>,
    pub negatives: Vec<(Hash, Hash)>,
    pub embeddings: Vec<Hash>,
    pub embedding_set: Set<Hash>,
    pub blobs: Vec<Hash>,
}

impl Dirty {
    fn node(&mut self, h: Hash) {
        if self.node_set.insert(h) {
            self.nodes.push(h);
        }
    }

    fn edge(&mut self, h: Hash) {
        if self.edge_set.insert(h) {
            self.edges.push(h);
        }
    }

    fn proposal(&mut self, h: Hash) {
        if self.proposal_set.insert(h) {
            self.proposals.push(h);
        }
    }

    fn embedding(&mut self, h: Hash) {
        if self.embedding_set.insert(h) {
            self.embeddings.push(h);
        }
    }
}

/// All tables and indexes of one store.
#[derive(Debug)]
pub struct State {
    pub(crate) blobs: Map<Hash, Box<[u8]>>,
    pub(crate) nodes: Map<Hash, NodeRow>,
    pub(crate) edges: Map<Hash, Edge>,
    pub(crate) out: Map<Hash, Vec<Hash>>,
    pub(crate) inc: Map<Hash, Vec<Hash>>,
    pub(crate) proposals: Map<Hash, MergeProposal>,
    pub(crate) pair_proposals: Map<(Hash, Hash), Vec<Hash>>,
    pub(crate) negatives: Set<(Hash, Hash)>,
    pub(crate) identity: Map<Hash, Vec<Hash>>,
    pub(crate) embeddings: Map<Hash, EmbeddingRecord>,
    pub(crate) names: Map<String, Vec<Hash>>,
    pub(crate) by_type: Map<NodeType, Vec<Hash>>,
    pub(crate) blocking: Map<String, Vec<Hash>>,
    pub(crate) phonetic: Map<String, Vec<Hash>>,
    pub(crate) summary_of: Map<Hash, Hash>,
    pub(crate) vectors: VectorIndex,
    pub(crate) lexical: LexicalIndex,
    pub(crate) resolvable: BTreeSet<NodeType>,
    pub(crate) dim: usize,
    pub(crate) params: HnswParams,
}

impl State {
    pub(crate) fn new(dim: usize, params: HnswParams, resolvable: BTreeSet<NodeType>) -> Self {
        Self {
            blobs: Map::default(),
            nodes: Map::default(),
            edges: Map::default(),
            out: Map::default(),
            inc: Map::default(),
            proposals: Map::default(),
            pair_proposals: Map::default(),
            negatives: Set::default(),
            identity: Map::default(),
            embeddings: Map::default(),
            names: Map::default(),
            by_type: Map::default(),
            blocking: Map::default(),
            phonetic: Map::default(),
            summary_of: Map::default(),
            vectors: VectorIndex::new(dim, params),
            lexical: LexicalIndex::new(),
            resolvable,
            dim,
            params,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn blob_count(&self) -> usize {
        self.blobs.len()
    }

    pub fn row(&self, h: &Hash) -> Option<&NodeRow> {
        self.nodes.get(h)
    }

    pub fn edge(&self, h: &Hash) -> Option<&Edge> {
        self.edges.get(h)
    }

    /// All node ids in unspecified order.
    pub fn node_ids(&self) -> impl Iterator<Item = &Hash> {
        self.nodes.keys()
    }

    /// All edges in unspecified order.
    pub fn all_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn out_ids(&self, h: &Hash) -> &[Hash] {
        self.out.get(h).map_or(&[], Vec::as_slice)
    }

    pub fn in_ids(&self, h: &Hash) -> &[Hash] {
        self.inc.get(h).map_or(&[], Vec::as_slice)
    }

    pub fn out_edges<'a>(&'a self, h: &Hash) -> impl Iterator<Item = &'a Edge> + 'a {
        self.out_ids(h).iter().filter_map(|e| self.edges.get(e))
    }

    pub fn in_edges<'a>(&'a self, h: &Hash) -> impl Iterator<Item = &'a Edge> + 'a {
        self.in_ids(h).iter().filter_map(|e| self.edges.get(e))
    }

    pub fn of_type(&self, t: &NodeType) -> &[Hash] {
        self.by_type.get(t).map_or(&[], Vec::as_slice)
    }

    pub fn embedding(&self, h: &Hash) -> Option<&EmbeddingRecord> {
        self.embeddings.get(h)
    }

    pub fn is_resolvable(&self, t: &NodeType) -> bool {
        self.resolvable.contains(t)
    }

    pub fn node(&self, h: &Hash) -> Option<Node> {
        let r = self.nodes.get(h)?;
        Some(Node {
            id: *h,
            node_type: r.node_type.clone(),
            name: r.name.clone(),
            content: r.content.clone(),
            children: r.children.clone(),
            edges: r.edges.clone(),
            created_at: r.created_at,
            embedding: self.embeddings.get(h).map(|e| e.effective.clone()),
            provenance: r.provenance.clone(),
            aliases: r.aliases.clone(),
            t_valid: r.t_valid,
            t_ingested: r.t_ingested,
            parent_world: r.parent_world,
            conflicts: r.conflicts,
        })
    }

    /// Recompute the id over the stored blob bytes.
    pub fn verify(&self, h: &Hash) -> Result<()> {
        let bytes = self.blobs.get(h).ok_or(Error::NotFound(*h))?;
        let canon = CanonicalNode::decode(bytes).ok_or(Error::IntegrityViolation(*h))?;
        if canon.id() != *h {
            return Err(Error::IntegrityViolation(*h));
        }
        Ok(())
    }

    pub fn blob(&self, h: &Hash) -> Option<&[u8]> {
        self.blobs.get(h).map(|b| &b[..])
    }

    pub fn proposals_for_pair(&self, a: Hash, b: Hash) -> impl Iterator<Item = &MergeProposal> {
        self.pair_proposals
            .get(&pair_key(a, b))
            .into_iter()
            .flatten()
            .filter_map(|id| self.proposals.get(id))
    }

    /// Pair is rejected, pending or accepted: nothing new should be staged.
    pub fn pair_settled(&self, a: Hash, b: Hash) -> bool {
        self.negatives.contains(&pair_key(a, b))
            || self.proposals_for_pair(a, b).any(|p| p.status != ProposalStatus::Rejected)
    }

    pub fn is_negative(&self, a: Hash, b: Hash) -> bool {
        self.negatives.contains(&pair_key(a, b))
    }

    pub fn accepted_neighbors(&self, h: &Hash) -> &[Hash] {
        self.identity.get(h).map_or(&[], Vec::as_slice)
    }

    fn index_keys(&self, row: &NodeRow) -> Vec<(Idx, String)> {
        let mut keys = Vec::new();
        let resolvable = self.resolvable.contains(&row.node_type);
        for s in std::iter::once(&row.name).chain(row.aliases.iter()) {
            keys.extend(self.string_keys(s, resolvable));
        }
        keys
    }

    fn string_keys(&self, s: &str, resolvable: bool) -> Vec<(Idx, String)> {
        let mut keys = vec![(Idx::Names, s.to_lowercase())];
        if resolvable {
            keys.extend(blocking_keys(s).into_iter().map(|k| (Idx::Blocking, k)));
            if let Ok(k) = phonetic_key(s) {
                keys.push((Idx::Phonetic, k));
            }
        }
        keys
    }

    fn index_mut(&mut self, idx: Idx) -> &mut Map<String, Vec<Hash>> {
        match idx {
            Idx::Names => &mut self.names,
            Idx::Blocking => &mut self.blocking,
            Idx::Phonetic => &mut self.phonetic,
        }
    }

    fn push_edge_adjacency(&mut self, e: &Edge) {
        self.out.entry(e.src).or_default().push(e.id);
        self.inc.entry(e.dst).or_default().push(e.id);
        if self.is_summary_link(e) {
            self.summary_of.entry(e.src).or_insert(e.dst);
        }
    }

    fn is_summary_link(&self, e: &Edge) -> bool {
        e.edge_type == EdgeType::CONTAINS
            && e.meta(ROLE) == Some(ROLE_SUMMARY)
            && self.nodes.get(&e.dst).is_some_and(|r| r.node_type == NodeType::SUMMARY)
    }

    /// Rebuild every derived index from the tables (after replay).
    pub(crate) fn rebuild_indexes(&mut self, parallel_ann: bool) -> Result<()> {
        self.out.clear();
        self.inc.clear();
        self.pair_proposals.clear();
        self.identity.clear();
        self.names.clear();
        self.by_type.clear();
        self.blocking.clear();
        self.phonetic.clear();
        self.summary_of.clear();
        self.lexical = LexicalIndex::new();

        let mut ids: Vec<Hash> = self.nodes.keys().copied().collect();
        ids.sort_unstable_by_key(|h| (self.nodes[h].t_ingested, *h));
        for h in &ids {
            let row = self.nodes[h].clone();
            for (idx, key) in self.index_keys(&row) {
                let list = self.index_mut(idx).entry(key).or_default();
                if !list.contains(h) {
                    list.push(*h);
                }
            }
            self.by_type.entry(row.node_type.clone()).or_default().push(*h);
            self.lexical.add(&row.node_type, *h, &lexical_text(&row));
        }

        let mut edges: Vec<Edge> = self.edges.values().cloned().collect();
        edges.sort_unstable_by_key(|e| (e.t_ingested, e.id));
        for e in &edges {
            self.push_edge_adjacency(e);
        }

        let mut props: Vec<MergeProposal> = self.proposals.values().cloned().collect();
        props.sort_unstable_by_key(|p| (p.staged_at, p.id));
        for p in &props {
            self.pair_proposals.entry(pair_key(p.left, p.right)).or_default().push(p.id);
            if p.status == ProposalStatus::Accepted {
                self.identity.entry(p.left).or_default().push(p.right);
                self.identity.entry(p.right).or_default().push(p.left);
            }
        }

        let mut vecs: Vec<(Hash, Vec<f32>)> =
            self.embeddings.iter().map(|(h, r)| (*h, r.effective.clone())).collect();
        vecs.sort_unstable_by_key(|(h, _)| *h);
        let mut index = VectorIndex::new(self.dim, self.params);
        index.defer();
        for (h, v) in vecs {
            index.upsert(h, &v)?;
        }
        index.rebuild(parallel_ann);
        self.vectors = index;
        Ok(())
    }
}

pub(crate) fn lexical_text(row: &NodeRow) -> String {
    if row.content.is_empty() {
        row.name.clone()
    } else {
        format!("{} {}", row.name, row.content)
    }
}

/// Result of putting a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PutOutcome {
    pub id: Hash,
    /// False when identical content already existed.
    pub created: bool,
}

/// Fields of a node that may change in an edit. Unset fields keep their value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeEdit {
    #[serde(default, rename = "type")]
    pub node_type: Option<NodeType>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub created_at: Option<Timestamp>,
    #[serde(default)]
    pub t_valid: Option<ValidityInterval>,
}

/// An open write transaction. Holds the store's write lock.
pub struct Txn<'a> {
    st: &'a mut State,
    inner: &'a Inner,
    registry: Arc<Registry>,
    now: Timestamp,
    undo: Vec<Undo>,
    pub(crate) dirty: Dirty,
    closures: Vec<(Hash, Timestamp)>,
    dispatches: u64,
    depth: u32,
    committed: bool,
}

const MAX_HANDLER_DEPTH: u32 = 32;

impl<'a> Txn<'a> {
    pub(crate) fn begin(st: &'a mut State, inner: &'a Inner, registry: Arc<Registry>, now: Timestamp) -> Self {
        Self {
            st,
            inner,
            registry,
            now,
            undo: Vec::new(),
            dirty: Dirty::default(),
            closures: Vec::new(),
            dispatches: 0,
            depth: 0,
            committed: false,
        }
    }

    /// Transaction timestamp; every default time in this transaction uses it.
    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn state(&self) -> &State {
        self.st
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn row(&self, h: &Hash) -> Option<&NodeRow> {
        self.st.nodes.get(h)
    }

    pub fn edge(&self, h: &Hash) -> Option<&Edge> {
        self.st.edges.get(h)
    }

    pub fn out_edge_ids(&self, h: &Hash) -> Vec<Hash> {
        self.st.out_ids(h).to_vec()
    }

    pub fn in_edge_ids(&self, h: &Hash) -> Vec<Hash> {
        self.st.in_ids(h).to_vec()
    }

    /// Validity closures performed so far, in order.
    pub fn closures(&self) -> &[(Hash, Timestamp)] {
        &self.closures
    }

    fn set_row(&mut self, h: Hash, row: NodeRow) {
        let prev = self.st.nodes.insert(h, row);
        self.undo.push(Undo::Node(h, prev));
        self.dirty.node(h);
    }

    fn push_index(&mut self, idx: Idx, key: String, h: Hash) {
        let list = self.st.index_mut(idx).entry(key.clone()).or_default();
        if list.contains(&h) {
            return;
        }
        list.push(h);
        self.undo.push(Undo::IndexPush(idx, key));
    }

    fn check_vector(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.st.dim {
            return Err(Error::DimMismatch { expected: self.st.dim, got: v.len() });
        }
        normalized(v).map(|_| ())
    }

    pub fn put_node(&mut self, draft: NodeDraft) -> Result<PutOutcome> {
        self.put_node_with(draft, false)
    }

    pub(crate) fn put_node_with(&mut self, draft: NodeDraft, reparent: bool) -> Result<PutOutcome> {
        for c in &draft.children {
            if !self.st.nodes.contains_key(c) {
                return Err(Error::DanglingChild(*c));
            }
        }
        for e in &draft.edges {
            if !self.st.edges.contains_key(e) {
                return Err(Error::DanglingEdge(*e));
            }
        }
        if let Some(v) = &draft.embedding {
            self.check_vector(v)?;
        }
        let created_at = draft.created_at.unwrap_or(self.now);
        let canon = CanonicalNode::new(
            draft.node_type.as_str(),
            draft.name.clone(),
            draft.content.clone(),
            &draft.children,
            &draft.edges,
            created_at,
        );
        let id = canon.id();
        if self.st.nodes.contains_key(&id) {
            self.merge_provenance(id, &draft.provenance, &draft.aliases)?;
            if let Some(v) = draft.embedding {
                if !self.st.embeddings.contains_key(&id) {
                    self.upsert_content(id, v)?;
                }
            }
            return Ok(PutOutcome { id, created: false });
        }
        let mut children = canon.children.clone();
        children.dedup();
        for c in &children {
            if let Some(p) = self.st.nodes[c].parent_world {
                if !reparent && p != id {
                    return Err(Error::AlreadyParented { child: *c, parent: p });
                }
            }
        }
        let t_valid = draft.t_valid.unwrap_or(ValidityInterval::open(created_at));
        t_valid.validate()?;
        let mut provenance = Vec::new();
        for s in draft.provenance {
            if !provenance.contains(&s) {
                provenance.push(s);
            }
        }
        let mut aliases: Vec<String> = Vec::new();
        for a in draft.aliases {
            if !a.is_empty() && !a.eq_ignore_ascii_case(&draft.name) && !aliases.iter().any(|x| x.eq_ignore_ascii_case(&a)) {
                aliases.push(a);
            }
        }
        let row = NodeRow {
            node_type: draft.node_type,
            name: canon.name.clone(),
            content: canon.content.clone(),
            children: canon.children.clone(),
            edges: canon.edges.clone(),
            created_at,
            t_valid,
            t_ingested: self.now,
            parent_world: None,
            provenance,
            aliases,
            conflicts: 0,
        };
        self.st.blobs.insert(id, canon.encode().into_boxed_slice());
        self.undo.push(Undo::Blob(id));
        self.dirty.blobs.push(id);
        for (idx, key) in self.st.index_keys(&row) {
            self.push_index(idx, key, id);
        }
        self.st.by_type.entry(row.node_type.clone()).or_default().push(id);
        self.undo.push(Undo::TypePush(row.node_type.clone()));
        self.set_row(id, row);
        self.dirty.new_nodes.push(id);

        for c in &children {
            let mut child = self.st.nodes[c].clone();
            child.parent_world = Some(id);
            self.set_row(*c, child);
        }
        for c in &children {
            self.write_edge(EdgeDraft::new(EdgeType::CONTAINS, id, *c).valid_from(created_at))?;
        }
        if let Some(v) = draft.embedding {
            self.upsert_content(id, v)?;
        }
        if !children.is_empty() && self.st.embeddings.contains_key(&id) {
            if let Some(mode) = self.inner.config.compose_mode {
                match crate::composer::compose_in(self, id, mode) {
                    Ok(_) | Err(Error::MissingEmbedding(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(PutOutcome { id, created: true })
    }

    /// Union new sources and aliases into an existing node.
    pub fn merge_provenance(&mut self, id: Hash, sources: &[Source], aliases: &[String]) -> Result<()> {
        let row = self.st.nodes.get(&id).ok_or(Error::NotFound(id))?;
        let mut new_sources = Vec::new();
        for s in sources {
            if !row.provenance.contains(s) && !new_sources.contains(s) {
                new_sources.push(s.clone());
            }
        }
        let mut new_aliases: Vec<String> = Vec::new();
        for a in aliases {
            let known = a.is_empty()
                || row.name.eq_ignore_ascii_case(a)
                || row.aliases.iter().any(|x| x.eq_ignore_ascii_case(a))
                || new_aliases.iter().any(|x| x.eq_ignore_ascii_case(a));
            if !known {
                new_aliases.push(a.clone());
            }
        }
        if new_sources.is_empty() && new_aliases.is_empty() {
            return Ok(());
        }
        let mut row = row.clone();
        let resolvable = self.st.resolvable.contains(&row.node_type);
        row.provenance.extend(new_sources);
        for a in &new_aliases {
            for (idx, key) in self.st.string_keys(a, resolvable) {
                self.push_index(idx, key, id);
            }
        }
        row.aliases.extend(new_aliases);
        self.set_row(id, row);
        Ok(())
    }

    /// Tighten a node's validity to `at`. Returns whether anything changed.
    pub fn close_node_validity(&mut self, id: Hash, at: Timestamp) -> Result<bool> {
        let row = self.st.nodes.get(&id).ok_or(Error::NotFound(id))?;
        let mut t_valid = row.t_valid;
        if !t_valid.tighten(at)? {
            return Ok(false);
        }
        let mut row = row.clone();
        row.t_valid = t_valid;
        self.set_row(id, row);
        self.closures.push((id, at));
        Ok(true)
    }

    /// Tighten an edge's validity to `at`. Returns whether anything changed.
    pub fn close_edge_validity(&mut self, id: Hash, at: Timestamp) -> Result<bool> {
        let edge = self.st.edges.get(&id).ok_or(Error::EdgeNotFound(id))?;
        let mut t_valid = edge.t_valid;
        if !t_valid.tighten(at)? {
            return Ok(false);
        }
        let prev = edge.clone();
        let mut edge = prev.clone();
        edge.t_valid = t_valid;
        self.st.edges.insert(id, edge);
        self.undo.push(Undo::Edge(prev));
        self.dirty.edge(id);
        Ok(true)
    }

    pub fn adjust_conflicts(&mut self, id: Hash, delta: i32) -> Result<()> {
        let row = self.st.nodes.get(&id).ok_or(Error::NotFound(id))?;
        let mut row = row.clone();
        row.conflicts = if delta >= 0 {
            row.conflicts.saturating_add(delta as u32)
        } else {
            row.conflicts.saturating_sub(delta.unsigned_abs())
        };
        self.set_row(id, row);
        Ok(())
    }

    /// Dispatch an edge through its type's handler and insert the row.
    /// Writing an edge whose id already exists is a no-op.
    pub fn write_edge(&mut self, draft: EdgeDraft) -> Result<Hash> {
        let entry = self
            .registry
            .get(&draft.edge_type)
            .ok_or_else(|| Error::UnregisteredEdgeType(draft.edge_type.to_string()))?;
        for end in [draft.src, draft.dst] {
            if !self.st.nodes.contains_key(&end) {
                return Err(Error::DanglingEndpoint(end));
            }
        }
        let t_valid = draft.t_valid.unwrap_or(ValidityInterval::open(self.now));
        t_valid.validate()?;
        let id = compute_edge_id(draft.edge_type.as_str(), &draft.src, &draft.dst, t_valid.from, &draft.metadata);
        if self.st.edges.contains_key(&id) {
            return Ok(id);
        }
        let edge = Edge {
            id,
            edge_type: draft.edge_type,
            src: draft.src,
            dst: draft.dst,
            t_valid,
            metadata: draft.metadata,
            status: EdgeStatus::Live,
            t_ingested: self.now,
        };
        if self.depth >= MAX_HANDLER_DEPTH {
            return Err(Error::HandlerRefused {
                edge_type: edge.edge_type.to_string(),
                reason: "handler chain too deep".into(),
            });
        }
        self.depth += 1;
        let outcome = entry.handler.on_insert(self, &edge);
        self.depth -= 1;
        outcome?;
        #[cfg(feature = "fault-injection")]
        if self.inner.fault.swap(false, std::sync::atomic::Ordering::SeqCst) {
            return Err(Error::InjectedFault);
        }
        self.insert_edge_row(edge);
        self.dispatches += 1;
        Ok(id)
    }

    fn insert_edge_row(&mut self, edge: Edge) {
        let id = edge.id;
        self.st.push_edge_adjacency(&edge);
        self.st.edges.insert(id, edge);
        self.undo.push(Undo::EdgeInsert(id));
        self.dirty.edge(id);
        self.dirty.new_edges.push(id);
    }

    /// Bypass handler dispatch entirely. Exists only to prove the fuzz
    /// harness notices when the write path is broken.
    #[cfg(feature = "fault-injection")]
    pub fn raw_append_edge(&mut self, draft: EdgeDraft) -> Result<Hash> {
        let t_valid = draft.t_valid.unwrap_or(ValidityInterval::open(self.now));
        let id = compute_edge_id(draft.edge_type.as_str(), &draft.src, &draft.dst, t_valid.from, &draft.metadata);
        self.insert_edge_row(Edge {
            id,
            edge_type: draft.edge_type,
            src: draft.src,
            dst: draft.dst,
            t_valid,
            metadata: draft.metadata,
            status: EdgeStatus::Live,
            t_ingested: self.now,
        });
        Ok(id)
    }

    /// Run the type's delete handler and retire the edge.
    pub fn delete_edge(&mut self, id: Hash) -> Result<Edge> {
        let edge = self.st.edges.get(&id).cloned().ok_or(Error::EdgeNotFound(id))?;
        if edge.status == EdgeStatus::Retired {
            return Ok(edge);
        }
        let entry = self
            .registry
            .get(&edge.edge_type)
            .ok_or_else(|| Error::UnregisteredEdgeType(edge.edge_type.to_string()))?;
        entry.handler.on_delete(self, &edge)?;
        let mut retired = edge.clone();
        retired.status = EdgeStatus::Retired;
        self.st.edges.insert(id, retired.clone());
        self.undo.push(Undo::Edge(edge));
        self.dirty.edge(id);
        Ok(retired)
    }

    /// Record a pending proposal for a freshly dispatched `same_as` edge.
    pub fn stage_proposal(&mut self, edge: &Edge, tier: Tier) -> Result<()> {
        let p = MergeProposal {
            id: edge.id,
            left: edge.src,
            right: edge.dst,
            status: ProposalStatus::Pending,
            staged_at: self.now,
            origin_tier: tier,
            decided_at: None,
        };
        let prev = self.st.proposals.insert(p.id, p.clone());
        self.undo.push(Undo::Proposal(p.id, prev));
        let key = pair_key(p.left, p.right);
        self.st.pair_proposals.entry(key).or_default().push(p.id);
        self.undo.push(Undo::PairPush(key));
        self.dirty.proposal(p.id);
        Ok(())
    }

    pub(crate) fn decide_proposal(&mut self, id: Hash, accept: bool) -> Result<MergeProposal> {
        let p = self.st.proposals.get(&id).cloned().ok_or(Error::ProposalNotFound(id))?;
        if p.status != ProposalStatus::Pending {
            return Err(Error::NotPending(id));
        }
        let mut next = p.clone();
        next.status = if accept { ProposalStatus::Accepted } else { ProposalStatus::Rejected };
        next.decided_at = Some(self.now);
        self.st.proposals.insert(id, next.clone());
        self.undo.push(Undo::Proposal(id, Some(p.clone())));
        self.dirty.proposal(id);
        if accept {
            self.st.identity.entry(p.left).or_default().push(p.right);
            self.st.identity.entry(p.right).or_default().push(p.left);
            self.undo.push(Undo::Identity(p.left, p.right));
        } else {
            let key = pair_key(p.left, p.right);
            if self.st.negatives.insert(key) {
                self.undo.push(Undo::Negative(key));
                self.dirty.negatives.push(key);
            }
        }
        Ok(next)
    }

    pub fn upsert_content(&mut self, id: Hash, v: Vec<f32>) -> Result<()> {
        if !self.st.nodes.contains_key(&id) {
            return Err(Error::NotFound(id));
        }
        self.check_vector(&v)?;
        let prev = self.st.embeddings.get(&id).cloned();
        let rec = match &prev {
            Some(r) if r.content == v => return Ok(()),
            Some(r) if r.overlaid => EmbeddingRecord { content: v, effective: r.effective.clone(), overlaid: true },
            _ => EmbeddingRecord { content: v.clone(), effective: v, overlaid: false },
        };
        self.st.embeddings.insert(id, rec);
        self.undo.push(Undo::Embedding(id, prev));
        self.dirty.embedding(id);
        Ok(())
    }

    /// Replace the effective vector. The content anchor is never touched.
    pub fn set_effective(&mut self, id: Hash, v: Vec<f32>) -> Result<()> {
        self.check_vector(&v)?;
        let prev = self.st.embeddings.get(&id).cloned().ok_or(Error::MissingEmbedding(id))?;
        if prev.effective == v && prev.overlaid {
            return Ok(());
        }
        let rec = EmbeddingRecord { content: prev.content.clone(), effective: v, overlaid: true };
        self.st.embeddings.insert(id, rec);
        self.undo.push(Undo::Embedding(id, Some(prev)));
        self.dirty.embedding(id);
        Ok(())
    }

    /// Write a new version of `target` and of every ancestor up to its root.
    /// Returns `(old, new)` pairs from the target upward.
    pub fn rewrite_with_edit(&mut self, target: Hash, edit: NodeEdit) -> Result<Vec<(Hash, Hash)>> {
        let row = self.st.nodes.get(&target).cloned().ok_or(Error::NotFound(target))?;
        let draft = NodeDraft {
            node_type: edit.node_type.unwrap_or_else(|| row.node_type.clone()),
            name: edit.name.unwrap_or_else(|| row.name.clone()),
            content: edit.content.unwrap_or_else(|| row.content.clone()),
            children: row.children.clone(),
            edges: row.edges.clone(),
            created_at: Some(edit.created_at.unwrap_or(row.created_at)),
            t_valid: Some(edit.t_valid.unwrap_or(row.t_valid)),
            provenance: row.provenance.clone(),
            aliases: row.aliases.clone(),
            embedding: None,
        };
        let new_id = crate::hash::compute_node_id(
            draft.node_type.as_str(),
            &draft.name,
            &draft.content,
            &draft.children,
            &draft.edges,
            draft.created_at.unwrap_or(row.created_at),
        );
        if new_id == target {
            return Err(Error::NoOpEdit);
        }
        let mut map = Vec::new();
        let new = self.put_version(target, draft)?;
        map.push((target, new));
        let (mut old_child, mut new_child) = (target, new);
        let mut parent = row.parent_world;
        while let Some(p) = parent {
            let prow = self.st.nodes.get(&p).cloned().ok_or(Error::NotFound(p))?;
            let children: Vec<Hash> =
                prow.children.iter().map(|c| if *c == old_child { new_child } else { *c }).collect();
            let draft = NodeDraft {
                node_type: prow.node_type.clone(),
                name: prow.name.clone(),
                content: prow.content.clone(),
                children,
                edges: prow.edges.clone(),
                created_at: Some(prow.created_at),
                t_valid: Some(prow.t_valid),
                provenance: prow.provenance.clone(),
                aliases: prow.aliases.clone(),
                embedding: None,
            };
            let np = self.put_version(p, draft)?;
            map.push((p, np));
            old_child = p;
            new_child = np;
            parent = prow.parent_world;
        }
        Ok(map)
    }

    fn put_version(&mut self, old: Hash, draft: NodeDraft) -> Result<Hash> {
        let out = self.put_node_with(draft, true)?;
        if let Some(rec) = self.st.embeddings.get(&old).cloned() {
            if let std::collections::hash_map::Entry::Vacant(slot) = self.st.embeddings.entry(out.id) {
                slot.insert(rec);
                self.undo.push(Undo::Embedding(out.id, None));
                self.dirty.embedding(out.id);
            }
        }
        Ok(out.id)
    }

    pub(crate) fn finish(mut self) -> (Dirty, u64) {
        self.committed = true;
        (std::mem::take(&mut self.dirty), self.dispatches)
    }

    /// Records describing every row this transaction touched, for the journal.
    pub(crate) fn records(&self) -> (Vec<(Hash, &[u8])>, Vec<Record>) {
        let blobs = self.dirty.blobs.iter().map(|h| (*h, &self.st.blobs[h][..])).collect();
        let mut recs = Vec::new();
        for h in &self.dirty.nodes {
            recs.push(Record::Node(*h, self.st.nodes[h].clone()));
        }
        for h in &self.dirty.edges {
            recs.push(Record::Edge(self.st.edges[h].clone()));
        }
        for h in &self.dirty.proposals {
            recs.push(Record::Proposal(self.st.proposals[h].clone()));
        }
        for (a, b) in &self.dirty.negatives {
            recs.push(Record::Negative(*a, *b));
        }
        for h in &self.dirty.embeddings {
            recs.push(Record::Embedding(*h, self.st.embeddings[h].clone()));
        }
        (blobs, recs)
    }

    /// Commit-time index maintenance: lexical documents and ANN vectors.
    pub(crate) fn apply_derived(&mut self) -> Result<()> {
        for h in &self.dirty.new_nodes {
            let row = &self.st.nodes[h];
            let text = lexical_text(row);
            self.st.lexical.add(&row.node_type, *h, &text);
        }
        for h in &self.dirty.embeddings {
            let v = self.st.embeddings[h].effective.clone();
            self.st.vectors.upsert(*h, &v)?;
        }
        Ok(())
    }

    fn rollback(&mut self) {
        while let Some(u) = self.undo.pop() {
            match u {
                Undo::Blob(h) => {
                    self.st.blobs.remove(&h);
                }
                Undo::Node(h, prev) => match prev {
                    Some(r) => {
                        self.st.nodes.insert(h, r);
                    }
                    None => {
                        self.st.nodes.remove(&h);
                    }
                },
                Undo::EdgeInsert(h) => {
                    if let Some(e) = self.st.edges.remove(&h) {
                        pop_matching(&mut self.st.out, &e.src, &h);
                        pop_matching(&mut self.st.inc, &e.dst, &h);
                        if self.st.summary_of.get(&e.src) == Some(&e.dst) && e.edge_type == EdgeType::CONTAINS {
                            self.st.summary_of.remove(&e.src);
                        }
                    }
                }
                Undo::Edge(prev) => {
                    self.st.edges.insert(prev.id, prev);
                }
                Undo::Proposal(h, prev) => match prev {
                    Some(p) => {
                        self.st.proposals.insert(h, p);
                    }
                    None => {
                        self.st.proposals.remove(&h);
                    }
                },
                Undo::PairPush(key) => {
                    if let Some(list) = self.st.pair_proposals.get_mut(&key) {
                        list.pop();
                        if list.is_empty() {
                            self.st.pair_proposals.remove(&key);
                        }
                    }
                }
                Undo::Negative(key) => {
                    self.st.negatives.remove(&key);
                }
                Undo::Identity(a, b) => {
                    pop_matching(&mut self.st.identity, &a, &b);
                    pop_matching(&mut self.st.identity, &b, &a);
                }
                Undo::Embedding(h, prev) => match prev {
                    Some(r) => {
                        self.st.embeddings.insert(h, r);
                    }
                    None => {
                        self.st.embeddings.remove(&h);
                    }
                },
                Undo::IndexPush(idx, key) => {
                    let map = self.st.index_mut(idx);
                    if let Some(list) = map.get_mut(&key) {
                        list.pop();
                        if list.is_empty() {
                            map.remove(&key);
                        }
                    }
                }
                Undo::TypePush(t) => {
                    if let Some(list) = self.st.by_type.get_mut(&t) {
                        list.pop();
                    }
                }
            }
        }
    }
}

fn pop_matching(map: &mut Map<Hash, Vec<Hash>>, key: &Hash, value: &Hash) {
    if let Some(list) = map.get_mut(key) {
        if list.last() == Some(value) {
            list.pop();
        } else if let Some(pos) = list.iter().rposition(|x| x == value) {
            list.remove(pos);
        }
        if list.is_empty() {
            map.remove(key);
        }
    }
}

impl Drop for Txn<'_> {
    fn drop(&mut self) {
        if !self.committed {
            self.rollback();
        }
    }
}

/// Replay journal records into a fresh state (tables only).
pub(crate) fn replay_into(st: &mut State, blobs: Vec<(Hash, Vec<u8>)>, records: Vec<Record>) {
    for (h, bytes) in blobs {
        st.blobs.insert(h, bytes.into_boxed_slice());
    }
    for r in records {
        match r {
            Record::Node(h, row) => {
                st.nodes.insert(h, row);
            }
            Record::Edge(e) => {
                st.edges.insert(e.id, e);
            }
            Record::Proposal(p) => {
                st.proposals.insert(p.id, p);
            }
            Record::Negative(a, b) => {
                st.negatives.insert((a, b));
            }
            Record::Embedding(h, rec) => {
                st.embeddings.insert(h, rec);
            }
        }
    }
}
