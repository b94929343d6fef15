//! Effective-vector storage with an HNSW graph on top.
//!
//! Vectors are stored unit-normalized in a flat slot buffer. Updating a hash
//! tombstones its old slot and appends a new one; [`VectorIndex::rebuild`]
//! compacts. The graph can be deferred for bulk loads, in which case every
//! search falls back to the exact scan.

mod hnsw;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::store::Map;

pub use hnsw::{Hnsw, HnswParams};

/// The content anchor and the effective vector that the index searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub content: Vec<f32>,
    pub effective: Vec<f32>,
    /// True once a composer has written the effective vector.
    pub overlaid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    pub dim: usize,
    pub live: usize,
    pub slots: usize,
    pub graph_nodes: usize,
    pub deferred: bool,
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Exact cosine in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn normalized(v: &[f32]) -> Result<Vec<f32>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

fn rank(mut hits: Vec<(Hash, f32)>, k: usize) -> Vec<(Hash, f32)> {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.truncate(k);
    hits
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    params: HnswParams,
    slots: Vec<Hash>,
    data: Vec<f32>,
    raw: Vec<f32>,
    live: Vec<bool>,
    slot_of: Map<Hash, u32>,
    graph: Option<Hnsw>,
    deferred: bool,
}

impl VectorIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        Self {
            dim,
            params,
            slots: Vec::new(),
            data: Vec::new(),
            raw: Vec::new(),
            live: Vec::new(),
            slot_of: Map::default(),
            graph: Some(Hnsw::new(dim, params)),
            deferred: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of searchable hashes.
    pub fn len(&self) -> usize {
        self.slot_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_of.is_empty()
    }

    pub fn contains(&self, h: &Hash) -> bool {
        self.slot_of.contains_key(h)
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            dim: self.dim,
            live: self.len(),
            slots: self.slots.len(),
            graph_nodes: self.graph.as_ref().map_or(0, Hnsw::len),
            deferred: self.deferred,
        }
    }

    pub fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    /// Stop maintaining the graph; searches use the exact scan until rebuild.
    pub fn defer(&mut self) {
        self.deferred = true;
        self.graph = None;
    }

    pub fn upsert(&mut self, h: Hash, v: &[f32]) -> Result<()> {
        self.check_dim(v)?;
        let unit = normalized(v)?;
        if let Some(&slot) = self.slot_of.get(&h) {
            let s = slot as usize * self.dim;
            if self.data[s..s + self.dim] == unit[..] {
                return Ok(());
            }
            self.live[slot as usize] = false;
        }
        let slot = self.slots.len() as u32;
        self.slots.push(h);
        self.data.extend_from_slice(&unit);
        self.raw.extend_from_slice(v);
        self.live.push(true);
        self.slot_of.insert(h, slot);
        if let Some(g) = self.graph.as_mut() {
            g.insert(&self.data, slot);
        }
        Ok(())
    }

    pub fn remove(&mut self, h: &Hash) {
        if let Some(slot) = self.slot_of.remove(h) {
            self.live[slot as usize] = false;
        }
    }

    /// Exact top-k by cosine over the stored vectors, ties by ascending hash.
    pub fn brute_force(&self, q: &[f32], k: usize, filter: Option<&dyn Fn(&Hash) -> bool>) -> Result<Vec<(Hash, f32)>> {
        self.check_dim(q)?;
        let mut hits = Vec::new();
        for (slot, h) in self.slots.iter().enumerate() {
            if !self.live[slot] || filter.is_some_and(|f| !f(h)) {
                continue;
            }
            let v = &self.raw[slot * self.dim..(slot + 1) * self.dim];
            hits.push((*h, cosine(q, v) as f32));
        }
        Ok(rank(hits, k))
    }

    /// Approximate top-k. Falls back to the exact scan when the graph is
    /// deferred or when filtering leaves fewer than `k` hits.
    pub fn knn(&self, q: &[f32], k: usize, filter: Option<&dyn Fn(&Hash) -> bool>) -> Result<Vec<(Hash, f32)>> {
        self.check_dim(q)?;
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let Some(graph) = self.graph.as_ref().filter(|_| !self.deferred) else {
            return self.brute_force(q, k, filter);
        };
        let unit = normalized(q)?;
        let ef = self.params.ef_search.max(k);
        let mut hits = Vec::with_capacity(k);
        for c in graph.search(&self.data, &unit, ef) {
            let h = self.slots[c.slot as usize];
            if !self.live[c.slot as usize] || filter.is_some_and(|f| !f(&h)) {
                continue;
            }
            let v = &self.raw[c.slot as usize * self.dim..(c.slot as usize + 1) * self.dim];
            hits.push((h, cosine(q, v) as f32));
        }
        if hits.len() < k.min(self.len()) {
            return self.brute_force(q, k, filter);
        }
        Ok(rank(hits, k))
    }

    /// Compact tombstones and rebuild the graph from the live vectors.
    pub fn rebuild(&mut self, parallel: bool) -> IndexStats {
        let mut pairs: Vec<(Hash, u32)> = self.slot_of.iter().map(|(h, s)| (*h, *s)).collect();
        pairs.sort_unstable();
        let mut slots = Vec::with_capacity(pairs.len());
        let mut data = Vec::with_capacity(pairs.len() * self.dim);
        let mut raw = Vec::with_capacity(pairs.len() * self.dim);
        let mut slot_of = Map::default();
        for (i, (h, old)) in pairs.into_iter().enumerate() {
            let s = old as usize * self.dim;
            slots.push(h);
            data.extend_from_slice(&self.data[s..s + self.dim]);
            raw.extend_from_slice(&self.raw[s..s + self.dim]);
            slot_of.insert(h, i as u32);
        }
        let n = slots.len();
        self.live = vec![true; n];
        self.slots = slots;
        self.data = data;
        self.raw = raw;
        self.slot_of = slot_of;
        self.graph = Some(Hnsw::build(self.dim, self.params, &self.data, n, parallel));
        self.deferred = false;
        self.stats()
    }

    /// Build a fresh graph over a snapshot without holding any lock on `self`.
    pub fn rebuilt(&self, parallel: bool) -> VectorIndex {
        let mut copy = self.clone();
        copy.rebuild(parallel);
        copy
    }
}
