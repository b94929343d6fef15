//! Background consolidation: summary nodes for aged worlds, one-pass
//! transitive closure, and the functional-relation contradiction sweep.
//! Every write goes through [`Txn::write_edge`] and [`Txn::put_node`].

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::model::{EdgeDraft, EdgeStatus, EdgeType, Node, NodeDraft, NodeType};
use crate::store::{State, Txn, ROLE, ROLE_SUMMARY};
use crate::time::{Timestamp, ValidityInterval};

pub const INFERRED_KEY: &str = "inferred";
pub const FLAGGED_KEY: &str = "flagged";
pub const STRUCTURAL: &str = "structural";

/// Produces summary text for a world from its children.
pub trait Summarizer: Send + Sync + fmt::Debug {
    fn summarize(&self, world: &Node, children: &[Node]) -> std::result::Result<String, String>;
}

/// Joins child names with `"; "`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ConcatSummarizer;

impl Summarizer for ConcatSummarizer {
    fn summarize(&self, _world: &Node, children: &[Node]) -> std::result::Result<String, String> {
        Ok(children.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("; "))
    }
}

#[derive(Debug, Clone)]
pub struct ConsolidatorConfig {
    pub min_age_secs: u64,
    /// Added to the types registered as functional.
    pub functional_types: BTreeSet<EdgeType>,
    pub closure_types: Vec<EdgeType>,
    pub summarizer: Arc<dyn Summarizer>,
    /// Worlds or edges written per transaction.
    pub batch: usize,
}

impl Default for ConsolidatorConfig {
    fn default() -> Self {
        Self {
            min_age_secs: 3600,
            functional_types: BTreeSet::new(),
            closure_types: vec![EdgeType::CAUSES, EdgeType::SUBTYPE_OF],
            summarizer: Arc::new(ConcatSummarizer),
            batch: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub summaries: Vec<Hash>,
    pub inferred: Vec<Hash>,
    pub contradictions: Vec<Hash>,
    /// Worlds whose summarizer failed, with the reason.
    pub skipped: Vec<(Hash, String)>,
}

fn live_at(e: &crate::model::Edge, now: Timestamp) -> bool {
    e.status == EdgeStatus::Live && !e.t_valid.is_closed_at(now)
}

/// Composite worlds old enough to summarize that have no summary yet.
pub fn summary_candidates(st: &State, now: Timestamp, min_age_secs: u64) -> Vec<Hash> {
    let cutoff = now.micros().saturating_sub((min_age_secs as i64).saturating_mul(1_000_000));
    let mut out: Vec<Hash> = st
        .nodes
        .iter()
        .filter(|(h, r)| {
            !r.children.is_empty()
                && r.node_type != NodeType::SUMMARY
                && r.t_ingested.micros() <= cutoff
                && !r.t_valid.is_closed_at(now)
                && !st.summary_of.contains_key(h)
        })
        .map(|(h, _)| *h)
        .collect();
    out.sort_unstable();
    out
}

/// Write a summary for one world: `world -contains{role=summary}-> summary`
/// and `summary -refers_to-> child` for every child.
pub fn summarize_world(tx: &mut Txn<'_>, world: Hash, summarizer: &dyn Summarizer) -> Result<Hash> {
    let st = tx.state();
    let w = st.node(&world).ok_or(Error::NotFound(world))?;
    let children: Vec<Node> = w.children.iter().filter_map(|c| st.node(c)).collect();
    let text = summarizer.summarize(&w, &children).map_err(Error::Summarizer)?;
    let embedding = mean_embedding(&children);
    let now = tx.now();
    let mut draft = NodeDraft::new(NodeType::SUMMARY, format!("summary: {}", w.name), text)
        .created_at(now)
        .valid(ValidityInterval::open(now));
    if let Some(v) = embedding {
        draft = draft.embedding(v);
    }
    let s = tx.put_node(draft)?.id;
    tx.write_edge(EdgeDraft::new(EdgeType::CONTAINS, world, s).valid_from(now).meta(ROLE, ROLE_SUMMARY))?;
    for c in &children {
        tx.write_edge(EdgeDraft::new(EdgeType::REFERS_TO, s, c.id).valid_from(now))?;
    }
    Ok(s)
}

fn mean_embedding(children: &[Node]) -> Option<Vec<f32>> {
    let first = children.first()?.embedding.as_ref()?;
    let mut acc = vec![0.0f64; first.len()];
    for c in children {
        let v = c.embedding.as_ref()?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += *x as f64;
        }
    }
    let n = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    (n > 0.0).then(|| acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// One closure pass over a snapshot: every live `a→b→c` without a live
/// `a→c` yields `(a, c, max(from))`.
pub fn closure_pairs(st: &State, edge_type: &EdgeType, now: Timestamp) -> Vec<(Hash, Hash, Timestamp)> {
    let live: Vec<&crate::model::Edge> =
        st.edges.values().filter(|e| &e.edge_type == edge_type && live_at(e, now)).collect();
    let exists: BTreeSet<(Hash, Hash)> = live.iter().map(|e| (e.src, e.dst)).collect();
    let mut found: std::collections::BTreeMap<(Hash, Hash), Timestamp> = std::collections::BTreeMap::new();
    for ab in &live {
        for bc in st.out_edges(&ab.dst) {
            if &bc.edge_type != edge_type || !live_at(bc, now) || bc.dst == ab.src {
                continue;
            }
            let key = (ab.src, bc.dst);
            if exists.contains(&key) {
                continue;
            }
            let from = ab.t_valid.from.max(bc.t_valid.from);
            let slot = found.entry(key).or_insert(from);
            *slot = (*slot).min(from);
        }
    }
    found.into_iter().map(|((a, c), from)| (a, c, from)).collect()
}

/// Target pairs that a functional type says cannot both hold.
pub fn sweep_pairs(st: &State, functional: &BTreeSet<EdgeType>, now: Timestamp) -> Vec<(Hash, Hash, Timestamp)> {
    let mut out = BTreeSet::new();
    let mut srcs: Vec<&Hash> = st.out.keys().collect();
    srcs.sort_unstable();
    for src in srcs {
        for t in functional {
            let mut targets: Vec<(Hash, Timestamp)> = st
                .out_edges(src)
                .filter(|e| &e.edge_type == t && live_at(e, now))
                .filter(|e| st.row(&e.dst).is_some_and(|r| !r.t_valid.is_closed_at(now)))
                .map(|e| (e.dst, e.t_valid.from))
                .collect();
            targets.sort_unstable();
            targets.dedup_by_key(|(h, _)| *h);
            for i in 0..targets.len() {
                for j in i + 1..targets.len() {
                    let (x, fx) = targets[i];
                    let (y, fy) = targets[j];
                    let already = st
                        .out_edges(&x)
                        .chain(st.in_edges(&x))
                        .any(|e| e.edge_type == EdgeType::CONTRADICTS && e.status == EdgeStatus::Live && e.other(&x) == y);
                    if !already {
                        out.insert((x, y, fx.max(fy)));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Summaries, then closure, then the sweep, each committed in batches.
pub fn run_pass(engine: &Engine, config: &ConsolidatorConfig) -> Result<ConsolidationReport> {
    let mut report = ConsolidationReport::default();
    let batch = config.batch.max(1);
    let now = engine.now();

    let worlds = engine.read(|st| summary_candidates(st, now, config.min_age_secs));
    for chunk in worlds.chunks(batch) {
        let (made, skipped) = engine.transact(|tx| {
            let mut made = Vec::new();
            let mut skipped = Vec::new();
            for w in chunk {
                match summarize_world(tx, *w, config.summarizer.as_ref()) {
                    Ok(s) => made.push(s),
                    Err(Error::Summarizer(reason)) => skipped.push((*w, reason)),
                    Err(e) => return Err(e),
                }
            }
            Ok((made, skipped))
        })?;
        report.summaries.extend(made);
        report.skipped.extend(skipped);
    }

    for t in &config.closure_types {
        let pairs = engine.read(|st| closure_pairs(st, t, now));
        for chunk in pairs.chunks(batch) {
            let ids = engine.transact(|tx| {
                chunk
                    .iter()
                    .map(|(a, c, from)| {
                        tx.write_edge(EdgeDraft::new(t.clone(), *a, *c).valid_from(*from).meta(INFERRED_KEY, "true"))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            report.inferred.extend(ids);
        }
    }

    let mut functional = config.functional_types.clone();
    functional.extend(engine.functional_types());
    let pairs = engine.read(|st| sweep_pairs(st, &functional, now));
    for chunk in pairs.chunks(batch) {
        let ids = engine.transact(|tx| {
            chunk
                .iter()
                .map(|(x, y, from)| {
                    tx.write_edge(
                        EdgeDraft::new(EdgeType::CONTRADICTS, *x, *y).valid_from(*from).meta(FLAGGED_KEY, STRUCTURAL),
                    )
                })
                .collect::<Result<Vec<_>>>()
        })?;
        report.contradictions.extend(ids);
    }
    Ok(report)
}
