//! Three retrieval lanes and reciprocal rank fusion.
//!
//! `S(d) = Σ 1 / (c + rank_lane(d))` over the lanes that ranked `d`.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hash::Hash;
use crate::model::{EdgeStatus, EdgeType, NodeType};
use crate::resolver::equivalence_class;
use crate::store::{Set, State};
use crate::time::Timestamp;

pub const RRF_C: u32 = 60;
pub const DEFAULT_K: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lane {
    Bm25,
    Vector,
    Entity,
}

impl std::str::FromStr for Lane {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Lane::Bm25),
            "vector" => Ok(Lane::Vector),
            "entity" => Ok(Lane::Entity),
            _ => Err(crate::error::Error::Parse(format!("unknown lane {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: Hash,
    /// Starts at 1.
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub lane: Lane,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Rank by descending score, ties by ascending hash; duplicates keep
    /// their best score.
    pub fn from_scored(lane: Lane, scored: Vec<(Hash, f64)>) -> Self {
        let mut best: BTreeMap<Hash, f64> = BTreeMap::new();
        for (h, s) in scored {
            let e = best.entry(h).or_insert(s);
            if s > *e {
                *e = s;
            }
        }
        let mut v: Vec<(Hash, f64)> = best.into_iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::from_ordered(lane, v)
    }

    /// Assign ranks 1.. to an already ordered, duplicate-free list.
    pub fn from_ordered(lane: Lane, ordered: Vec<(Hash, f64)>) -> Self {
        let entries = ordered.into_iter().enumerate().map(|(i, (id, score))| RankedEntry { id, rank: i + 1, score }).collect();
        Self { lane, entries }
    }

    pub fn ids(&self) -> Vec<Hash> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub id: Hash,
    pub score: f64,
    pub lanes: Vec<Lane>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedResult {
    pub entries: Vec<FusedEntry>,
}

impl FusedResult {
    pub fn ids(&self) -> Vec<Hash> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

pub fn rrf_fuse(lists: &[RankedList], c: u32, top: usize) -> FusedResult {
    let mut acc: BTreeMap<Hash, (f64, Vec<Lane>)> = BTreeMap::new();
    for list in lists {
        for e in &list.entries {
            let slot = acc.entry(e.id).or_insert((0.0, Vec::new()));
            slot.0 += 1.0 / (c as f64 + e.rank as f64);
            if !slot.1.contains(&list.lane) {
                slot.1.push(list.lane);
            }
        }
    }
    let mut entries: Vec<FusedEntry> = acc
        .into_iter()
        .map(|(id, (score, mut lanes))| {
            lanes.sort();
            FusedEntry { id, score, lanes }
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    entries.truncate(top);
    FusedResult { entries }
}

/// Which nodes a lane may return.
#[derive(Debug, Clone)]
pub struct LaneFilter<'a> {
    /// Node types searched by the lexical and vector lanes.
    pub types: Vec<NodeType>,
    /// Restrict every lane to these ids when set.
    pub allowed: Option<&'a Set<Hash>>,
    /// Also return nodes whose validity is closed.
    pub include_retired: bool,
    pub now: Timestamp,
}

impl<'a> LaneFilter<'a> {
    pub fn new(now: Timestamp) -> Self {
        Self { types: vec![NodeType::TURN, NodeType::SUMMARY], allowed: None, include_retired: false, now }
    }

    pub fn types(mut self, types: impl IntoIterator<Item = NodeType>) -> Self {
        self.types = types.into_iter().collect();
        self
    }

    pub fn allowed(mut self, allowed: &'a Set<Hash>) -> Self {
        self.allowed = Some(allowed);
        self
    }

    pub fn include_retired(mut self, yes: bool) -> Self {
        self.include_retired = yes;
        self
    }

    fn keeps(&self, st: &State, h: &Hash) -> bool {
        let Some(row) = st.row(h) else { return false };
        (self.include_retired || !row.t_valid.is_closed_at(self.now)) && self.allowed.map_or(true, |a| a.contains(h))
    }

    fn keeps_typed(&self, st: &State, h: &Hash) -> bool {
        self.keeps(st, h) && st.row(h).is_some_and(|r| self.types.contains(&r.node_type))
    }
}

pub fn bm25_lane(st: &State, question: &str, k: usize, filter: &LaneFilter<'_>) -> RankedList {
    let keep = |h: &Hash| filter.keeps(st, h);
    let hits = st.lexical.search(question, Some(&filter.types), k, &keep);
    RankedList::from_ordered(Lane::Bm25, hits)
}

pub fn vector_lane(st: &State, q: &[f32], k: usize, filter: &LaneFilter<'_>) -> Result<RankedList> {
    let keep = |h: &Hash| filter.keeps_typed(st, h);
    let hits = st.vectors.knn(q, k, Some(&keep))?;
    Ok(RankedList::from_scored(Lane::Vector, hits.into_iter().map(|(h, s)| (h, s as f64)).collect()))
}

fn at_word_boundary(hay: &str, start: usize, len: usize) -> bool {
    let before = hay[..start].chars().next_back().map_or(true, |c| !c.is_alphanumeric());
    let after = hay[start + len..].chars().next().map_or(true, |c| !c.is_alphanumeric());
    before && after
}

/// 0 when the name occurs as a whole word, 1 for a bare substring, `None`
/// when absent.
fn mention(question: &str, name: &str) -> Option<u8> {
    if name.is_empty() {
        return None;
    }
    let mut found = None;
    for (i, _) in question.match_indices(name) {
        if at_word_boundary(question, i, name.len()) {
            return Some(0);
        }
        found = Some(1);
    }
    found
}

/// Facts that `refers_to` an entity named in the question, expanded over
/// the entity's accepted identity class. Whole-word mentions rank above
/// bare substrings; within each group, newest validity first.
pub fn entity_lane(st: &State, question: &str, filter: &LaneFilter<'_>) -> RankedList {
    let q = question.to_lowercase();
    let mut best_group: BTreeMap<Hash, u8> = BTreeMap::new();
    for e in st.of_type(&NodeType::ENTITY) {
        let Some(row) = st.row(e) else { continue };
        if row.t_valid.is_closed_at(filter.now) && !filter.include_retired {
            continue;
        }
        let Some(group) = mention(&q, &row.name.to_lowercase()) else { continue };
        for member in equivalence_class(st, *e).unwrap_or_default() {
            let g = best_group.entry(member).or_insert(group);
            *g = (*g).min(group);
        }
    }
    let mut facts: BTreeMap<Hash, u8> = BTreeMap::new();
    for (entity, group) in &best_group {
        for edge in st.in_edges(entity) {
            if edge.edge_type != EdgeType::REFERS_TO || edge.status != EdgeStatus::Live {
                continue;
            }
            if !filter.include_retired && edge.t_valid.is_closed_at(filter.now) {
                continue;
            }
            let fact = edge.src;
            if !st.row(&fact).is_some_and(|r| r.node_type == NodeType::FACT) || !filter.keeps(st, &fact) {
                continue;
            }
            let g = facts.entry(fact).or_insert(*group);
            *g = (*g).min(*group);
        }
    }
    let mut ordered: Vec<(u8, Reverse<Timestamp>, Hash)> =
        facts.into_iter().map(|(h, g)| (g, Reverse(st.row(&h).expect("fact exists").t_valid.from), h)).collect();
    ordered.sort();
    let n = ordered.len() as f64;
    let list = ordered.into_iter().enumerate().map(|(i, (_, _, h))| (h, n - i as f64)).collect();
    RankedList::from_ordered(Lane::Entity, list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveOptions {
    pub k_per_lane: usize,
    pub top: usize,
    pub lanes: Vec<Lane>,
    pub c: u32,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self { k_per_lane: DEFAULT_K, top: DEFAULT_K, lanes: vec![Lane::Bm25, Lane::Vector, Lane::Entity], c: RRF_C }
    }
}

/// Run the enabled lanes and fuse. The vector lane is skipped without a
/// question vector.
pub fn retrieve(
    st: &State,
    question: &str,
    qvec: Option<&[f32]>,
    opts: &RetrieveOptions,
    filter: &LaneFilter<'_>,
) -> Result<(FusedResult, Vec<RankedList>)> {
    let mut lists = Vec::with_capacity(3);
    if opts.lanes.contains(&Lane::Bm25) {
        lists.push(bm25_lane(st, question, opts.k_per_lane, filter));
    }
    if let (true, Some(q)) = (opts.lanes.contains(&Lane::Vector), qvec) {
        lists.push(vector_lane(st, q, opts.k_per_lane, filter)?);
    }
    if opts.lanes.contains(&Lane::Entity) {
        let mut list = entity_lane(st, question, filter);
        list.entries.truncate(opts.k_per_lane);
        lists.push(list);
    }
    Ok((rrf_fuse(&lists, opts.c, opts.top), lists))
}
