//! Hierarchical navigable small-world graph over unit vectors.
//!
//! The graph stores only slot numbers; vector data lives in the caller's flat
//! buffer and is passed into every call. Distances are `1 - dot` because every
//! stored vector is unit length.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self { m: 16, ef_construction: 200, ef_search: 64, seed: 0x5eed_1e5e }
    }
}

const MAX_LEVEL: usize = 16;
const SEQUENTIAL_PREFIX: usize = 2048;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Cand {
    pub dist: f32,
    pub slot: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.slot.cmp(&other.slot))
    }
}

#[derive(Debug, Clone)]
pub struct Hnsw {
    params: HnswParams,
    dim: usize,
    /// slot -> level -> neighbor slots
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
}

thread_local! {
    static VISITED: RefCell<Visited> = RefCell::new(Visited::default());
}

#[derive(Default)]
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time a slot is seen in this epoch.
    fn insert(&mut self, slot: u32) -> bool {
        let m = &mut self.marks[slot as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Hnsw {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        Self { params, dim, links: Vec::new(), entry: None, max_level: 0 }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    /// Number of slots wired into the graph (including tombstoned ones).
    pub fn len(&self) -> usize {
        self.links.iter().filter(|l| !l.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_none()
    }

    fn vec<'a>(&self, data: &'a [f32], slot: u32) -> &'a [f32] {
        let s = slot as usize * self.dim;
        &data[s..s + self.dim]
    }

    fn dist(&self, data: &[f32], q: &[f32], slot: u32) -> f32 {
        1.0 - dot(q, self.vec(data, slot))
    }

    fn cap(&self, level: usize) -> usize {
        if level == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    /// Level drawn from the slot number so that rebuilds are reproducible.
    fn level_for(&self, slot: u32) -> usize {
        let bits = splitmix64(self.params.seed ^ (slot as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
        let u = ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let ml = 1.0 / (self.params.m.max(2) as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    fn ensure_slot(&mut self, slot: u32) {
        if self.links.len() <= slot as usize {
            self.links.resize_with(slot as usize + 1, Vec::new);
        }
    }

    fn greedy(&self, data: &[f32], q: &[f32], mut ep: u32, level: usize) -> u32 {
        let mut best = self.dist(data, q, ep);
        loop {
            let mut improved = false;
            for &n in &self.links[ep as usize][level] {
                let d = self.dist(data, q, n);
                if d < best || (d == best && n < ep) {
                    best = d;
                    ep = n;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Beam search on one layer. Result is sorted by ascending distance.
    fn search_layer(&self, data: &[f32], q: &[f32], eps: &[u32], ef: usize, level: usize) -> Vec<Cand> {
        VISITED.with(|v| {
            let mut visited = v.borrow_mut();
            visited.reset(self.links.len());
            let mut frontier: BinaryHeap<std::cmp::Reverse<Cand>> = BinaryHeap::new();
            let mut best: BinaryHeap<Cand> = BinaryHeap::new();
            for &ep in eps {
                if visited.insert(ep) {
                    let c = Cand { dist: self.dist(data, q, ep), slot: ep };
                    frontier.push(std::cmp::Reverse(c));
                    best.push(c);
                }
            }
            while let Some(std::cmp::Reverse(c)) = frontier.pop() {
                if let Some(worst) = best.peek() {
                    if c.dist > worst.dist && best.len() >= ef {
                        break;
                    }
                }
                for &n in &self.links[c.slot as usize][level] {
                    if !visited.insert(n) {
                        continue;
                    }
                    let d = self.dist(data, q, n);
                    let full = best.len() >= ef;
                    if !full || d < best.peek().map_or(f32::INFINITY, |w| w.dist) {
                        let nc = Cand { dist: d, slot: n };
                        frontier.push(std::cmp::Reverse(nc));
                        best.push(nc);
                        if best.len() > ef {
                            best.pop();
                        }
                    }
                }
            }
            let mut out = best.into_vec();
            out.sort_unstable();
            out
        })
    }

    /// Neighbor selection heuristic with pruned connections kept as filler.
    fn select(&self, data: &[f32], cands: &[Cand], m: usize) -> Vec<u32> {
        let mut chosen: Vec<Cand> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for &c in cands {
            if chosen.len() >= m {
                break;
            }
            let cv = self.vec(data, c.slot);
            let diverse = chosen.iter().all(|r| 1.0 - dot(cv, self.vec(data, r.slot)) > c.dist);
            if diverse {
                chosen.push(c);
            } else {
                pruned.push(c.slot);
            }
        }
        let mut out: Vec<u32> = chosen.into_iter().map(|c| c.slot).collect();
        for p in pruned {
            if out.len() >= m {
                break;
            }
            out.push(p);
        }
        out
    }

    fn connect(&mut self, data: &[f32], slot: u32, level: usize, neighbors: Vec<u32>) {
        self.links[slot as usize][level] = neighbors.clone();
        let cap = self.cap(level);
        for n in neighbors {
            let list = &mut self.links[n as usize][level];
            if list.contains(&slot) {
                continue;
            }
            list.push(slot);
            if list.len() > cap {
                let nv = self.vec(data, n);
                let mut cands: Vec<Cand> = self.links[n as usize][level]
                    .iter()
                    .map(|&x| Cand { dist: 1.0 - dot(nv, self.vec(data, x)), slot: x })
                    .collect();
                cands.sort_unstable();
                let kept = self.select(data, &cands, cap);
                self.links[n as usize][level] = kept;
            }
        }
    }

    /// Per-level candidate lists for a new slot, computed against the current graph.
    fn plan_insert(&self, data: &[f32], slot: u32, level: usize) -> Vec<Vec<Cand>> {
        let q = self.vec(data, slot);
        let Some(mut ep) = self.entry else {
            return Vec::new();
        };
        for l in (level + 1..=self.max_level).rev() {
            ep = self.greedy(data, q, ep, l);
        }
        let top = level.min(self.max_level);
        let mut plans = vec![Vec::new(); top + 1];
        let mut eps = vec![ep];
        for l in (0..=top).rev() {
            let cands = self.search_layer(data, q, &eps, self.params.ef_construction, l);
            eps = cands.iter().map(|c| c.slot).take(1).collect();
            plans[l] = cands;
        }
        plans
    }

    fn apply_insert(&mut self, data: &[f32], slot: u32, level: usize, plans: Vec<Vec<Cand>>) {
        self.ensure_slot(slot);
        self.links[slot as usize] = vec![Vec::new(); level + 1];
        for (l, cands) in plans.into_iter().enumerate() {
            let cands: Vec<Cand> = cands.into_iter().filter(|c| c.slot != slot).collect();
            let neighbors = self.select(data, &cands, self.params.m);
            self.connect(data, slot, l, neighbors);
        }
        match self.entry {
            None => {
                self.entry = Some(slot);
                self.max_level = level;
            }
            Some(_) if level > self.max_level => {
                self.entry = Some(slot);
                self.max_level = level;
            }
            _ => {}
        }
    }

    pub fn insert(&mut self, data: &[f32], slot: u32) {
        let level = self.level_for(slot);
        let plans = self.plan_insert(data, slot, level);
        self.apply_insert(data, slot, level, plans);
    }

    /// Build over slots `0..n`. The parallel path inserts a sequential prefix,
    /// then plans each batch concurrently against the frozen graph and wires
    /// the batch in slot order.
    pub fn build(dim: usize, params: HnswParams, data: &[f32], n: usize, parallel: bool) -> Self {
        let mut g = Hnsw::new(dim, params);
        g.links.reserve(n);
        if !parallel {
            for s in 0..n {
                g.insert(data, s as u32);
            }
            return g;
        }
        let prefix = n.min(SEQUENTIAL_PREFIX);
        for s in 0..prefix {
            g.insert(data, s as u32);
        }
        let mut next = prefix;
        while next < n {
            let batch = (next / 8).clamp(256, 8192).min(n - next);
            let slots: Vec<u32> = (next as u32..(next + batch) as u32).collect();
            let planned: Vec<(u32, usize, Vec<Vec<Cand>>)> = slots
                .par_iter()
                .map(|&s| {
                    let level = g.level_for(s);
                    (s, level, g.plan_insert(data, s, level))
                })
                .collect();
            for (s, level, plans) in planned {
                g.apply_insert(data, s, level, plans);
            }
            next += batch;
        }
        g
    }

    /// Approximate nearest slots by ascending distance.
    pub(crate) fn search(&self, data: &[f32], q: &[f32], ef: usize) -> Vec<Cand> {
        let Some(mut ep) = self.entry else {
            return Vec::new();
        };
        for l in (1..=self.max_level).rev() {
            ep = self.greedy(data, q, ep, l);
        }
        self.search_layer(data, q, &[ep], ef, 0)
    }
}
