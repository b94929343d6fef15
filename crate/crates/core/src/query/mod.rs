//! Deterministic read pipeline: a start set followed by operators, returning
//! a subgraph. Nothing on this path mutates the store.

mod parse;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handlers::{QueryRewrite, Registry};
use crate::hash::Hash;
use crate::model::{Edge, EdgeStatus, EdgeType, Node, NodeType};
use crate::store::{NodeRow, Set, State};
use crate::time::Timestamp;

pub use parse::parse_pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Outgoing,
    Incoming,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Valid,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSet {
    Hashes(Vec<Hash>),
    Text { text: String, k: usize },
    Vector { vector: Vec<f32>, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    /// `edge_type: None` follows every type; `depth: None` is unbounded.
    Traverse { edge_type: Option<EdgeType>, direction: Direction, depth: Option<u32> },
    FilterType(BTreeSet<NodeType>),
    /// Keep nodes whose validity overlaps `[from, to)`.
    FilterTime { from: Timestamp, to: Option<Timestamp> },
    WhereConnected { edge_type: EdgeType, direction: Direction, target: Hash },
    InWorld(Hash),
    AsOf { axis: Axis, at: Timestamp },
    IncludeSuperseded,
    PreferSummaries,
}

impl Op {
    pub fn traverse(edge_type: impl Into<EdgeType>, direction: Direction, depth: u32) -> Op {
        Op::Traverse { edge_type: Some(edge_type.into()), direction, depth: Some(depth) }
    }

    pub fn filter_type(types: impl IntoIterator<Item = NodeType>) -> Op {
        Op::FilterType(types.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub start: StartSet,
    #[serde(default)]
    pub ops: Vec<Op>,
}

impl Query {
    pub fn seeds(seeds: impl IntoIterator<Item = Hash>) -> Self {
        Self { start: StartSet::Hashes(seeds.into_iter().collect()), ops: Vec::new() }
    }

    pub fn op(mut self, op: Op) -> Self {
        self.ops.push(op);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    #[serde(default)]
    pub seeds: Option<Vec<Hash>>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub vector: Option<Vec<f32>>,
    /// Start-set size for text and vector seeding.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub ops: Vec<Op>,
}

fn default_k() -> usize {
    10
}

/// Seeds beat text, text beats vector.
pub fn plan(spec: QuerySpec) -> Result<Query> {
    let start = if let Some(seeds) = spec.seeds {
        StartSet::Hashes(seeds)
    } else if let Some(text) = spec.text {
        StartSet::Text { text, k: spec.k }
    } else if let Some(vector) = spec.vector {
        StartSet::Vector { vector, k: spec.k }
    } else {
        return Err(Error::EmptySpec);
    };
    Ok(Query { start, ops: spec.ops })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    /// Ordered by `(t_valid.from, id)`.
    pub nodes: Vec<Node>,
    /// Ordered by id.
    pub edges: Vec<Edge>,
    pub conflict_flags: BTreeSet<Hash>,
}

impl Subgraph {
    pub fn ids(&self) -> BTreeSet<Hash> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn contains(&self, h: &Hash) -> bool {
        self.nodes.iter().any(|n| n.id == *h)
    }
}

#[derive(Debug, Clone, Copy)]
struct View {
    now: Timestamp,
    include_superseded: bool,
    as_of: Option<(Axis, Timestamp)>,
    prefer_summaries: bool,
}

impl View {
    fn node_visible(&self, row: &NodeRow) -> bool {
        if let Some((Axis::Ingested, at)) = self.as_of {
            if row.t_ingested > at {
                return false;
            }
        }
        if self.include_superseded {
            return true;
        }
        match self.as_of {
            Some((Axis::Valid, at)) => row.t_valid.contains(at),
            _ => !row.t_valid.is_closed_at(self.now),
        }
    }

    fn edge_visible(&self, e: &Edge) -> bool {
        if e.status != EdgeStatus::Live {
            return false;
        }
        if let Some((Axis::Ingested, at)) = self.as_of {
            if e.t_ingested > at {
                return false;
            }
        }
        if self.include_superseded {
            return true;
        }
        let at = match self.as_of {
            Some((Axis::Valid, at)) => at,
            _ => self.now,
        };
        !e.t_valid.is_closed_at(at)
    }
}

/// Every node below `w` by children lists and `contains` edges, plus `w`.
pub fn interior(st: &State, w: Hash) -> Set<Hash> {
    let mut seen: Set<Hash> = Set::default();
    seen.insert(w);
    let mut stack = vec![w];
    while let Some(x) = stack.pop() {
        let Some(row) = st.row(&x) else { continue };
        let kids = row.children.iter().copied().chain(
            st.out_edges(&x).filter(|e| e.edge_type == EdgeType::CONTAINS && e.status == EdgeStatus::Live).map(|e| e.dst),
        );
        for k in kids.collect::<Vec<_>>() {
            if seen.insert(k) {
                stack.push(k);
            }
        }
    }
    seen
}

struct Exec<'a> {
    st: &'a State,
    view: View,
    world: Option<Set<Hash>>,
    set: BTreeSet<Hash>,
    edges: BTreeMap<Hash, ()>,
}

impl<'a> Exec<'a> {
    fn admits(&self, e: &Edge, to: &Hash) -> bool {
        match &self.world {
            Some(w) => w.contains(to) || e.edge_type == EdgeType::REFERS_TO,
            None => true,
        }
    }

    fn step_edges(&self, x: &Hash, direction: Direction) -> Vec<(&'a Edge, Hash)> {
        let st: &'a State = self.st;
        let mut out = Vec::new();
        if matches!(direction, Direction::Outgoing | Direction::Both) {
            out.extend(st.out_edges(x).map(|e| (e, e.dst)));
        }
        if matches!(direction, Direction::Incoming | Direction::Both) {
            out.extend(st.in_edges(x).map(|e| (e, e.src)));
        }
        out
    }

    fn traverse(&mut self, edge_type: Option<&EdgeType>, direction: Direction, depth: Option<u32>) {
        let mut frontier: Vec<Hash> = self.set.iter().copied().collect();
        let mut level = 0u32;
        while !frontier.is_empty() && depth.map_or(true, |d| level < d) {
            let mut next = Vec::new();
            for x in &frontier {
                let summary = if self.view.prefer_summaries { self.st.summary_of.get(x).copied() } else { None };
                for (e, to) in self.step_edges(x, direction) {
                    if edge_type.is_some_and(|t| &e.edge_type != t) || !self.view.edge_visible(e) {
                        continue;
                    }
                    if let Some(s) = summary {
                        if e.edge_type == EdgeType::CONTAINS && e.src == *x && to != s {
                            continue;
                        }
                    }
                    let Some(row) = self.st.row(&to) else { continue };
                    if !self.view.node_visible(row) || !self.admits(e, &to) {
                        continue;
                    }
                    self.edges.insert(e.id, ());
                    if self.set.insert(to) {
                        next.push(to);
                    }
                }
            }
            frontier = next;
            level += 1;
        }
    }

    fn where_connected(&mut self, edge_type: &EdgeType, direction: Direction, target: Hash) {
        let st = self.st;
        let view = self.view;
        let keep = |n: &Hash| {
            let out = matches!(direction, Direction::Outgoing | Direction::Both)
                && st.out_edges(n).any(|e| &e.edge_type == edge_type && e.dst == target && view.edge_visible(e));
            let inc = matches!(direction, Direction::Incoming | Direction::Both)
                && st.in_edges(n).any(|e| &e.edge_type == edge_type && e.src == target && view.edge_visible(e));
            out || inc
        };
        self.set.retain(keep);
    }
}

/// Run a query against a snapshot at time `now`.
pub fn execute(st: &State, registry: &Registry, q: &Query, now: Timestamp) -> Result<Subgraph> {
    let seeds: Vec<Hash> = match &q.start {
        StartSet::Hashes(hs) => {
            for h in hs {
                if st.row(h).is_none() {
                    return Err(Error::UnknownSeed(*h));
                }
            }
            hs.clone()
        }
        StartSet::Text { text, k } => st.lexical.search(text, None, *k, &|_| true).into_iter().map(|(h, _)| h).collect(),
        StartSet::Vector { vector, k } => st.vectors.knn(vector, *k, None)?.into_iter().map(|(h, _)| h).collect(),
    };
    if seeds.is_empty() {
        return Err(Error::EmptyStartSet);
    }
    let seed_set: BTreeSet<Hash> = seeds.iter().copied().collect();
    // View modifiers hold for the whole pipeline wherever they appear.
    let mut view = View { now, include_superseded: false, as_of: None, prefer_summaries: false };
    for op in &q.ops {
        match op {
            Op::AsOf { axis, at } => view.as_of = Some((*axis, *at)),
            Op::IncludeSuperseded => view.include_superseded = true,
            Op::PreferSummaries => view.prefer_summaries = true,
            _ => {}
        }
    }
    let mut ex = Exec {
        st,
        view,
        world: None,
        set: seed_set.clone(),
        edges: BTreeMap::new(),
    };
    for op in &q.ops {
        match op {
            Op::Traverse { edge_type, direction, depth } => ex.traverse(edge_type.as_ref(), *direction, *depth),
            Op::FilterType(types) => ex.set.retain(|h| st.row(h).is_some_and(|r| types.contains(&r.node_type))),
            Op::FilterTime { from, to } => ex.set.retain(|h| st.row(h).is_some_and(|r| r.t_valid.overlaps(*from, *to))),
            Op::WhereConnected { edge_type, direction, target } => ex.where_connected(edge_type, *direction, *target),
            Op::InWorld(w) => {
                if st.row(w).is_none() {
                    return Err(Error::UnknownSeed(*w));
                }
                let inner = interior(st, *w);
                ex.set.retain(|h| inner.contains(h));
                ex.world = Some(inner);
            }
            Op::AsOf { .. } | Op::IncludeSuperseded | Op::PreferSummaries => {}
        }
    }
    let mut rewrite = QueryRewrite::default();
    let mut final_ids: BTreeSet<Hash> = BTreeSet::new();
    for h in &ex.set {
        let row = st.row(h).expect("set members exist");
        if !view.node_visible(row) {
            continue;
        }
        final_ids.insert(*h);
        for e in st.out_edges(h).chain(st.in_edges(h)) {
            if !view.edge_visible(e) {
                continue;
            }
            if let Some(reg) = registry.get(&e.edge_type) {
                reg.handler.on_query_rewrite(e, &mut rewrite);
            }
        }
    }
    for h in &rewrite.hidden {
        final_ids.remove(h);
    }
    let mut nodes: Vec<Node> = final_ids.iter().filter_map(|h| st.node(h)).collect();
    nodes.sort_by_key(|n| (n.t_valid.from, n.id));
    let in_scope = |h: &Hash| final_ids.contains(h) || seed_set.contains(h);
    let edges: Vec<Edge> = ex
        .edges
        .keys()
        .filter_map(|id| st.edge(id))
        .filter(|e| in_scope(&e.src) && in_scope(&e.dst))
        .cloned()
        .collect();
    let conflict_flags = rewrite.conflict_flags.into_iter().filter(|h| final_ids.contains(h)).collect();
    Ok(Subgraph { nodes, edges, conflict_flags })
}
