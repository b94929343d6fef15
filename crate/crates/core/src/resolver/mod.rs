//! Tiered entity resolution, identity classes and neighborhood reclustering.

pub mod similarity;

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::model::{NodeType, Source, Tier};
use crate::store::{NodeRow, Set, State};
use crate::time::Timestamp;
use crate::vector::cosine;

use similarity::{blocking_keys, name_similarity, phonetic_key};

/// A name to resolve against the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub content: String,
}

impl Candidate {
    pub fn new(node_type: impl Into<NodeType>, name: impl Into<String>) -> Self {
        Self { name: name.into(), aliases: Vec::new(), node_type: node_type.into(), embedding: None, content: String::new() }
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.aliases.push(alias.into());
        self
    }

    pub fn embedding(mut self, v: Vec<f32>) -> Self {
        self.embedding = Some(v);
        self
    }

    fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str)).filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub id: Hash,
    pub tier: Tier,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Resolution {
    Resolved(Match),
    Ambiguous { options: Vec<Match> },
    New,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum Jaro-Winkler similarity for the fuzzy tier.
    pub fuzzy: f64,
    /// Minimum cosine similarity for the embedding tier.
    pub embedding: f64,
    /// Neighbors fetched from the vector index for the embedding tier.
    pub embedding_k: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { fuzzy: 0.92, embedding: 0.88, embedding_k: 10 }
    }
}

/// Adjudicates when the fuzzy, phonetic and embedding tiers point at
/// different identities. Returning `None` leaves the resolution ambiguous.
pub trait Tiebreaker: Send + Sync + fmt::Debug {
    fn choose(&self, candidate: &Candidate, options: &[Match]) -> Option<usize>;
}

/// Prefers fuzzy, then embedding, then phonetic.
#[derive(Debug, Default, Clone, Copy)]
pub struct TierPreference;

impl Tiebreaker for TierPreference {
    fn choose(&self, _candidate: &Candidate, options: &[Match]) -> Option<usize> {
        let rank = |t: Tier| match t {
            Tier::Exact => 0,
            Tier::Fuzzy => 1,
            Tier::Embedding => 2,
            Tier::Phonetic => 3,
            _ => 4,
        };
        options.iter().enumerate().min_by_key(|(_, m)| (rank(m.tier), m.id)).map(|(i, _)| i)
    }
}

/// Provenance entry tagged with the class member that holds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSource {
    pub member: Hash,
    pub source: Source,
}

/// Reflexive, symmetric, transitive closure over accepted `same_as` pairs.
pub fn equivalence_class(st: &State, h: Hash) -> Result<BTreeSet<Hash>> {
    if st.row(&h).is_none() {
        return Err(Error::NotFound(h));
    }
    let mut seen = BTreeSet::from([h]);
    let mut queue = VecDeque::from([h]);
    while let Some(x) = queue.pop_front() {
        for y in st.accepted_neighbors(&x) {
            if seen.insert(*y) {
                queue.push_back(*y);
            }
        }
    }
    Ok(seen)
}

/// Deduplicated provenance over the identity class, sorted by member then source.
pub fn export_identity(st: &State, h: Hash) -> Result<Vec<TaggedSource>> {
    let mut out: Vec<TaggedSource> = Vec::new();
    for member in equivalence_class(st, h)? {
        for s in &st.row(&member).expect("class members exist").provenance {
            if !out.iter().any(|t| &t.source == s) {
                out.push(TaggedSource { member, source: s.clone() });
            }
        }
    }
    Ok(out)
}

/// Nodes sharing a token or a three-character token prefix with `name`.
pub fn block_candidates(st: &State, name: &str) -> Vec<Hash> {
    let mut pool = BTreeSet::new();
    for key in blocking_keys(name) {
        if let Some(list) = st.blocking.get(&key) {
            pool.extend(list.iter().copied());
        }
    }
    pool.into_iter().collect()
}

fn row_names(row: &NodeRow) -> impl Iterator<Item = &str> {
    std::iter::once(row.name.as_str()).chain(row.aliases.iter().map(String::as_str))
}

/// Read-only context shared by every tier.
pub struct ResolveCtx<'a> {
    pub st: &'a State,
    pub now: Timestamp,
    pub thresholds: Thresholds,
    pub tiebreaker: &'a dyn Tiebreaker,
    /// Targets for which this returns true are skipped.
    pub exclude: &'a dyn Fn(&Hash) -> bool,
}

impl ResolveCtx<'_> {
    fn target(&self, h: &Hash) -> Option<&NodeRow> {
        let row = self.st.row(h)?;
        let ok = self.st.is_resolvable(&row.node_type) && !row.t_valid.is_closed_at(self.now) && !(self.exclude)(h);
        ok.then_some(row)
    }

    pub fn exact(&self, cand: &Candidate) -> Vec<Hash> {
        let mut hits = BTreeSet::new();
        for n in cand.names() {
            for h in self.st.names.get(&n.to_lowercase()).into_iter().flatten() {
                if self.target(h).is_some() {
                    hits.insert(*h);
                }
            }
        }
        hits.into_iter().collect()
    }

    pub fn fuzzy(&self, cand: &Candidate) -> Option<Match> {
        let mut pool = BTreeSet::new();
        for n in cand.names() {
            pool.extend(block_candidates(self.st, n));
        }
        let mut best: Option<Match> = None;
        for h in pool {
            let Some(row) = self.target(&h) else { continue };
            let score = cand
                .names()
                .flat_map(|a| row_names(row).map(move |b| name_similarity(a, b)))
                .fold(0.0f64, f64::max);
            if score >= self.thresholds.fuzzy && best.map_or(true, |b| score > b.score) {
                best = Some(Match { id: h, tier: Tier::Fuzzy, score });
            }
        }
        best
    }

    pub fn phonetic(&self, cand: &Candidate) -> Option<Match> {
        let mut pool = BTreeSet::new();
        for n in cand.names() {
            if let Ok(key) = phonetic_key(n) {
                pool.extend(self.st.phonetic.get(&key).into_iter().flatten().copied());
            }
        }
        // Among equal keys, the closest spelling wins.
        let mut best: Option<(f64, Hash)> = None;
        for h in pool {
            let Some(row) = self.target(&h) else { continue };
            let score = cand
                .names()
                .flat_map(|a| row_names(row).map(move |b| name_similarity(a, b)))
                .fold(0.0f64, f64::max);
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, h));
            }
        }
        best.map(|(_, id)| Match { id, tier: Tier::Phonetic, score: 1.0 })
    }

    pub fn embedding(&self, cand: &Candidate) -> Result<Option<Match>> {
        let Some(q) = &cand.embedding else { return Ok(None) };
        let keep = |h: &Hash| self.target(h).is_some();
        let hits = self.st.vectors.knn(q, self.thresholds.embedding_k, Some(&keep))?;
        let mut best: Option<Match> = None;
        for (h, _) in hits {
            let Some(rec) = self.st.embedding(&h) else { continue };
            let score = cosine(q, &rec.effective);
            if score >= self.thresholds.embedding && best.map_or(true, |b| score > b.score) {
                best = Some(Match { id: h, tier: Tier::Embedding, score });
            }
        }
        Ok(best)
    }

    fn same_class(&self, a: Hash, b: Hash) -> bool {
        a == b || equivalence_class(self.st, a).is_ok_and(|c| c.contains(&b))
    }

    /// Exact matches win outright; otherwise the remaining tiers vote and
    /// the tiebreaker settles disagreement.
    pub fn resolve(&self, cand: &Candidate) -> Result<Resolution> {
        if cand.name.trim().is_empty() {
            return Err(Error::EmptyName);
        }
        let exact = self.exact(cand);
        if let Some(first) = exact.first() {
            let mut reps: Vec<Hash> = Vec::new();
            for h in &exact {
                if !reps.iter().any(|r| self.same_class(*r, *h)) {
                    reps.push(*h);
                }
            }
            if reps.len() == 1 {
                return Ok(Resolution::Resolved(Match { id: *first, tier: Tier::Exact, score: 1.0 }));
            }
            let options = reps.into_iter().map(|id| Match { id, tier: Tier::Exact, score: 1.0 }).collect();
            return Ok(Resolution::Ambiguous { options });
        }
        let mut votes: Vec<Match> = Vec::new();
        votes.extend(self.fuzzy(cand));
        votes.extend(self.phonetic(cand));
        votes.extend(self.embedding(cand)?);
        let Some(first) = votes.first().copied() else { return Ok(Resolution::New) };
        if votes.iter().all(|m| self.same_class(first.id, m.id)) {
            return Ok(Resolution::Resolved(first));
        }
        let mut options: Vec<Match> = Vec::new();
        for m in votes {
            if !options.iter().any(|o| self.same_class(o.id, m.id)) {
                options.push(m);
            }
        }
        match self.tiebreaker.choose(cand, &options) {
            Some(i) if i < options.len() => {
                let m = options[i];
                Ok(Resolution::Resolved(Match { id: m.id, tier: Tier::Tiebreaker, score: m.score }))
            }
            _ => Ok(Resolution::Ambiguous { options }),
        }
    }
}

/// Nodes within two hops of the frontier along live or retired edges.
pub fn two_hop(st: &State, frontier: &[Hash]) -> BTreeSet<Hash> {
    let mut seen: BTreeSet<Hash> = frontier.iter().copied().filter(|h| st.row(h).is_some()).collect();
    let mut layer: Vec<Hash> = seen.iter().copied().collect();
    for _ in 0..2 {
        let mut next = Vec::new();
        for h in &layer {
            for e in st.out_edges(h).chain(st.in_edges(h)) {
                let o = e.other(h);
                if seen.insert(o) {
                    next.push(o);
                }
            }
        }
        layer = next;
    }
    seen
}

/// Pairs that reclustering would stage for the given frontier. Resolvable
/// nodes run every tier; other frontier members only the embedding tier.
pub fn recluster_pairs(ctx_base: &ResolveCtx<'_>, frontier: &[Hash]) -> Result<Vec<(Hash, Match)>> {
    let st = ctx_base.st;
    let frontier_set: Set<Hash> = frontier.iter().copied().collect();
    let mut out = Vec::new();
    let mut staged: Set<(Hash, Hash)> = Set::default();
    for h in two_hop(st, frontier) {
        let row = st.row(&h).expect("neighborhood nodes exist");
        if row.t_valid.is_closed_at(ctx_base.now) {
            continue;
        }
        let resolvable = st.is_resolvable(&row.node_type);
        if !resolvable && !frontier_set.contains(&h) {
            continue;
        }
        let class = equivalence_class(st, h)?;
        let exclude = |t: &Hash| class.contains(t) || st.pair_settled(h, *t) || (ctx_base.exclude)(t);
        let ctx = ResolveCtx {
            st,
            now: ctx_base.now,
            thresholds: ctx_base.thresholds,
            tiebreaker: ctx_base.tiebreaker,
            exclude: &exclude,
        };
        let cand = Candidate {
            name: row.name.clone(),
            aliases: row.aliases.clone(),
            node_type: row.node_type.clone(),
            embedding: st.embedding(&h).map(|r| r.content.clone()),
            content: row.content.clone(),
        };
        let matches = if resolvable {
            match ctx.resolve(&cand) {
                Ok(Resolution::Resolved(m)) => vec![m],
                Ok(Resolution::Ambiguous { options }) => options,
                Ok(Resolution::New) | Err(Error::EmptyName) => Vec::new(),
                Err(e) => return Err(e),
            }
        } else {
            ctx.embedding(&cand)?.into_iter().collect()
        };
        for m in matches {
            if staged.insert(crate::model::pair_key(h, m.id)) {
                out.push((h, m));
            }
        }
    }
    Ok(out)
}
