//! The engine handle: one writer at a time, concurrent snapshot readers.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Weak};
use std::thread;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::composer::{self, ComposeMode};
use crate::consolidator::{self, ConsolidationReport, ConsolidatorConfig};
use crate::error::{Error, Result};
use crate::fusion::{self, FusedResult, LaneFilter, RankedList, RetrieveOptions};
use crate::handlers::{EdgeHandler, Registry, TIER_KEY};
use crate::hash::Hash;
use crate::model::{Edge, EdgeDraft, EdgeType, MergeProposal, Node, NodeDraft, NodeType, ProposalStatus};
use crate::query::{self, Query, QuerySpec, Subgraph};
use crate::reconciler::{self, Extraction, IngestReport};
use crate::resolver::{self, Candidate, Resolution, ResolveCtx, TaggedSource, Thresholds, TierPreference, Tiebreaker};
use crate::store::journal::Persist;
use crate::store::{self, NodeEdit, PutOutcome, State, Txn};
use crate::time::{Clock, SystemClock, Timestamp, ValidityInterval};
use crate::vector::{EmbeddingRecord, HnswParams, IndexStats};

/// When post-ingest reclustering runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReclusterMode {
    /// On a worker thread after commit.
    Background,
    /// Synchronously after commit, before `ingest` returns.
    Inline,
    Off,
}

#[derive(Clone)]
pub struct EngineConfig {
    pub dim: usize,
    pub hnsw: HnswParams,
    pub resolvable_types: BTreeSet<NodeType>,
    /// Compose a world's effective vector when it is put. `None` disables.
    pub compose_mode: Option<ComposeMode>,
    pub recluster: ReclusterMode,
    /// fsync the logs on every commit.
    pub sync: bool,
    pub clock: Arc<dyn Clock>,
    pub thresholds: Thresholds,
    pub tiebreaker: Arc<dyn Tiebreaker>,
}

impl fmt::Debug for EngineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EngineConfig")
            .field("dim", &self.dim)
            .field("hnsw", &self.hnsw)
            .field("resolvable_types", &self.resolvable_types)
            .field("compose_mode", &self.compose_mode)
            .field("recluster", &self.recluster)
            .field("sync", &self.sync)
            .field("thresholds", &self.thresholds)
            .finish_non_exhaustive()
    }
}

impl EngineConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hnsw: HnswParams::default(),
            resolvable_types: BTreeSet::from([NodeType::ENTITY]),
            compose_mode: Some(ComposeMode::V2Attention),
            recluster: ReclusterMode::Background,
            sync: false,
            clock: Arc::new(SystemClock),
            thresholds: Thresholds::default(),
            tiebreaker: Arc::new(TierPreference),
        }
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn recluster(mut self, mode: ReclusterMode) -> Self {
        self.recluster = mode;
        self
    }

    pub fn compose_mode(mut self, mode: Option<ComposeMode>) -> Self {
        self.compose_mode = mode;
        self
    }

    pub fn hnsw(mut self, params: HnswParams) -> Self {
        self.hnsw = params;
        self
    }

    pub fn sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }
}

enum Job {
    Frontier(Vec<Hash>),
    Flush(mpsc::Sender<()>),
}

pub(crate) struct Inner {
    pub(crate) state: RwLock<State>,
    registry: RwLock<Arc<Registry>>,
    pub(crate) config: EngineConfig,
    persist: Mutex<Option<Persist>>,
    dispatches: AtomicU64,
    jobs: Mutex<Option<mpsc::Sender<Job>>>,
    #[cfg(feature = "fault-injection")]
    pub(crate) fault: std::sync::atomic::AtomicBool,
}

/// Outcome of a single `write_edge` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeOutcome {
    pub id: Hash,
    pub validity_closures: Vec<(Hash, Timestamp)>,
    pub proposal: Option<Hash>,
}

/// Cheap to clone; clones share one store.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine").field("config", &self.inner.config).finish_non_exhaustive()
    }
}

impl Engine {
    fn with_state(config: EngineConfig, state: State, persist: Option<Persist>) -> Self {
        let inner = Arc::new(Inner {
            state: RwLock::new(state),
            registry: RwLock::new(Arc::new(Registry::with_defaults())),
            config,
            persist: Mutex::new(persist),
            dispatches: AtomicU64::new(0),
            jobs: Mutex::new(None),
            #[cfg(feature = "fault-injection")]
            fault: std::sync::atomic::AtomicBool::new(false),
        });
        if inner.config.recluster == ReclusterMode::Background {
            let (tx, rx) = mpsc::channel();
            *inner.jobs.lock() = Some(tx);
            let weak = Arc::downgrade(&inner);
            thread::Builder::new()
                .name("recluster".into())
                .spawn(move || worker(weak, rx))
                .expect("spawn recluster worker");
        }
        Engine { inner }
    }

    pub fn in_memory(config: EngineConfig) -> Self {
        let state = State::new(config.dim, config.hnsw, config.resolvable_types.clone());
        Self::with_state(config, state, None)
    }

    /// Open or create a store directory, replaying its logs.
    pub fn open(dir: impl AsRef<Path>, config: EngineConfig) -> Result<Self> {
        let (persist, replay) = Persist::open(dir.as_ref(), config.dim, config.sync)?;
        let mut state = State::new(config.dim, config.hnsw, config.resolvable_types.clone());
        store::replay_into(&mut state, replay.blobs, replay.records);
        state.rebuild_indexes(true)?;
        Ok(Self::with_state(config, state, Some(persist)))
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.config
    }

    pub fn now(&self) -> Timestamp {
        self.inner.config.clock.now()
    }

    /// Run `f` against a consistent snapshot.
    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(&self.inner.state.read())
    }

    fn transact_dirty<T>(&self, f: impl FnOnce(&mut Txn<'_>) -> Result<T>) -> Result<(T, Vec<Hash>)> {
        let mut st = self.inner.state.write();
        let registry = self.inner.registry.read().clone();
        let now = self.inner.config.clock.now();
        let mut tx = Txn::begin(&mut st, &self.inner, registry, now);
        let out = f(&mut tx)?;
        if let Some(p) = self.inner.persist.lock().as_mut() {
            let (blobs, records) = tx.records();
            p.append(&blobs, &records)?;
        }
        tx.apply_derived()?;
        let (dirty, dispatches) = tx.finish();
        self.inner.dispatches.fetch_add(dispatches, Ordering::Relaxed);
        Ok((out, dirty.new_nodes))
    }

    /// Run `f` in one write transaction. An error, or a panic, rolls back
    /// every change made inside `f`.
    pub fn transact<T>(&self, f: impl FnOnce(&mut Txn<'_>) -> Result<T>) -> Result<T> {
        self.transact_dirty(f).map(|(t, _)| t)
    }

    pub fn put_node(&self, draft: NodeDraft) -> Result<PutOutcome> {
        self.transact(|tx| tx.put_node(draft))
    }

    pub fn get_node(&self, id: &Hash, verify: bool) -> Result<Node> {
        let st = self.inner.state.read();
        if verify {
            st.verify(id)?;
        }
        st.node(id).ok_or(Error::NotFound(*id))
    }

    pub fn contains_node(&self, id: &Hash) -> bool {
        self.inner.state.read().row(id).is_some()
    }

    pub fn get_edge(&self, id: &Hash) -> Result<Edge> {
        self.inner.state.read().edge(id).cloned().ok_or(Error::EdgeNotFound(*id))
    }

    /// Tighten a node's validity to `at`.
    pub fn close_validity(&self, id: Hash, at: Timestamp) -> Result<ValidityInterval> {
        self.transact(|tx| {
            tx.close_node_validity(id, at)?;
            Ok(tx.row(&id).expect("closed node exists").t_valid)
        })
    }

    pub fn write_edge(&self, draft: EdgeDraft) -> Result<EdgeOutcome> {
        self.transact(|tx| {
            let id = tx.write_edge(draft)?;
            let proposal = tx.dirty.proposals.contains(&id).then_some(id);
            Ok(EdgeOutcome { id, validity_closures: tx.closures().to_vec(), proposal })
        })
    }

    pub fn delete_edge(&self, id: Hash) -> Result<Edge> {
        self.transact(|tx| tx.delete_edge(id))
    }

    pub fn register_edge_type(
        &self,
        name: impl Into<EdgeType>,
        handler: Arc<dyn EdgeHandler>,
        functional: bool,
    ) -> Result<()> {
        let mut reg = self.inner.registry.write();
        let mut next = (**reg).clone();
        next.register(name.into(), handler, functional)?;
        *reg = Arc::new(next);
        Ok(())
    }

    pub fn edge_types(&self) -> Vec<EdgeType> {
        self.inner.registry.read().names().cloned().collect()
    }

    pub fn functional_types(&self) -> BTreeSet<EdgeType> {
        self.inner.registry.read().functional_types()
    }

    pub fn rewrite_with_edit(&self, target: Hash, edit: NodeEdit) -> Result<Vec<(Hash, Hash)>> {
        self.transact(|tx| tx.rewrite_with_edit(target, edit))
    }

    /// Ingest an extraction atomically, then recluster around new nodes.
    pub fn ingest(&self, ex: Extraction) -> Result<IngestReport> {
        self.ingest_with(ex, |_, _| Ok(()))
    }

    /// Like [`Engine::ingest`], running `after` in the same transaction.
    pub fn ingest_with(
        &self,
        ex: Extraction,
        after: impl FnOnce(&mut Txn<'_>, &IngestReport) -> Result<()>,
    ) -> Result<IngestReport> {
        let cfg = &self.inner.config;
        let (report, new_nodes) = self.transact_dirty(|tx| {
            let report = reconciler::ingest_in(tx, ex, cfg.thresholds, cfg.tiebreaker.as_ref())?;
            after(tx, &report)?;
            Ok(report)
        })?;
        let frontier: Vec<Hash> = new_nodes.into_iter().filter(|h| report.created.contains(h)).collect();
        if !frontier.is_empty() {
            self.schedule_recluster(frontier)?;
        }
        Ok(report)
    }

    fn schedule_recluster(&self, frontier: Vec<Hash>) -> Result<()> {
        match self.inner.config.recluster {
            ReclusterMode::Off => Ok(()),
            ReclusterMode::Inline => self.recluster(&frontier).map(|_| ()),
            ReclusterMode::Background => {
                if let Some(tx) = self.inner.jobs.lock().as_ref() {
                    // The worker only exits once the engine is gone.
                    let _ = tx.send(Job::Frontier(frontier));
                }
                Ok(())
            }
        }
    }

    /// Block until every queued recluster job has finished.
    pub fn flush_recluster(&self) {
        let (done_tx, done_rx) = mpsc::channel();
        let sent = self.inner.jobs.lock().as_ref().is_some_and(|tx| tx.send(Job::Flush(done_tx)).is_ok());
        if sent {
            let _ = done_rx.recv();
        }
    }

    /// Re-resolve the two-hop neighborhood of `frontier` and stage any new
    /// proposals. Returns the staged proposals.
    pub fn recluster(&self, frontier: &[Hash]) -> Result<Vec<MergeProposal>> {
        recluster_inner(&self.inner, frontier)
    }

    pub fn resolve(&self, candidate: &Candidate) -> Result<Resolution> {
        let st = self.inner.state.read();
        let cfg = &self.inner.config;
        let ctx = ResolveCtx {
            st: &st,
            now: cfg.clock.now(),
            thresholds: cfg.thresholds,
            tiebreaker: cfg.tiebreaker.as_ref(),
            exclude: &|_| false,
        };
        ctx.resolve(candidate)
    }

    pub fn block_candidates(&self, name: &str) -> Vec<Hash> {
        resolver::block_candidates(&self.inner.state.read(), name)
    }

    pub fn equivalence_class(&self, h: Hash) -> Result<BTreeSet<Hash>> {
        resolver::equivalence_class(&self.inner.state.read(), h)
    }

    pub fn export_identity(&self, h: Hash) -> Result<Vec<TaggedSource>> {
        resolver::export_identity(&self.inner.state.read(), h)
    }

    pub fn accept_merge(&self, proposal: Hash) -> Result<MergeProposal> {
        self.transact(|tx| tx.decide_proposal(proposal, true))
    }

    pub fn reject_merge(&self, proposal: Hash) -> Result<MergeProposal> {
        self.transact(|tx| tx.decide_proposal(proposal, false))
    }

    pub fn proposal(&self, id: &Hash) -> Result<MergeProposal> {
        self.inner.state.read().proposals.get(id).cloned().ok_or(Error::ProposalNotFound(*id))
    }

    /// Proposals ordered by staging time, optionally filtered by status.
    pub fn proposals(&self, status: Option<ProposalStatus>) -> Vec<MergeProposal> {
        let st = self.inner.state.read();
        let mut out: Vec<MergeProposal> =
            st.proposals.values().filter(|p| status.map_or(true, |s| p.status == s)).cloned().collect();
        out.sort_by_key(|p| (p.staged_at, p.id));
        out
    }

    pub fn upsert_content(&self, id: Hash, v: Vec<f32>) -> Result<()> {
        self.transact(|tx| tx.upsert_content(id, v))
    }

    pub fn set_effective(&self, id: Hash, v: Vec<f32>) -> Result<()> {
        self.transact(|tx| tx.set_effective(id, v))
    }

    pub fn embedding(&self, id: &Hash) -> Option<EmbeddingRecord> {
        self.inner.state.read().embedding(id).cloned()
    }

    pub fn knn(&self, q: &[f32], k: usize) -> Result<Vec<(Hash, f32)>> {
        self.inner.state.read().vectors.knn(q, k, None)
    }

    pub fn brute_force_knn(&self, q: &[f32], k: usize) -> Result<Vec<(Hash, f32)>> {
        self.inner.state.read().vectors.brute_force(q, k, None)
    }

    /// Rebuild the ANN graph from the embedding table. The graph is built
    /// from a snapshot without blocking readers, then swapped in.
    pub fn rebuild_index(&self, parallel: bool) -> Result<IndexStats> {
        let (dim, params, mut vecs) = {
            let st = self.inner.state.read();
            let vecs: Vec<(Hash, Vec<f32>)> = st.embeddings.iter().map(|(h, r)| (*h, r.effective.clone())).collect();
            (st.dim, st.params, vecs)
        };
        vecs.sort_unstable_by_key(|(h, _)| *h);
        let mut index = crate::vector::VectorIndex::new(dim, params);
        index.defer();
        for (h, v) in &vecs {
            index.upsert(*h, v)?;
        }
        index.rebuild(parallel);
        let mut st = self.inner.state.write();
        // Vectors written while building are replayed onto the new graph.
        let stale: Vec<(Hash, Vec<f32>)> = st
            .embeddings
            .iter()
            .filter(|(h, r)| vecs.binary_search_by_key(*h, |(x, _)| *x).map_or(true, |i| vecs[i].1 != r.effective))
            .map(|(h, r)| (*h, r.effective.clone()))
            .collect();
        for (h, v) in stale {
            index.upsert(h, &v)?;
        }
        st.vectors = index;
        Ok(st.vectors.stats())
    }

    pub fn index_stats(&self) -> IndexStats {
        self.inner.state.read().vectors.stats()
    }

    pub fn compose(&self, world: Hash, mode: ComposeMode) -> Result<Vec<f32>> {
        self.transact(|tx| composer::compose_in(tx, world, mode))
    }

    pub fn propagate(&self, changed: Hash, mode: ComposeMode) -> Result<Vec<Hash>> {
        self.transact(|tx| composer::propagate_in(tx, changed, mode))
    }

    pub fn plan(&self, spec: QuerySpec) -> Result<Query> {
        query::plan(spec)
    }

    pub fn execute(&self, q: &Query) -> Result<Subgraph> {
        self.execute_at(q, self.now())
    }

    /// Execute with an explicit "now" for the default view.
    pub fn execute_at(&self, q: &Query, now: Timestamp) -> Result<Subgraph> {
        let registry = self.inner.registry.read().clone();
        query::execute(&self.inner.state.read(), &registry, q, now)
    }

    /// Resolve a full hex id or a unique prefix of at least four characters.
    pub fn resolve_prefix(&self, s: &str) -> Result<Hash> {
        let s = s.trim().to_ascii_lowercase();
        if s.len() < 4 {
            return Err(Error::PrefixTooShort(s));
        }
        if !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::InvalidHash(s));
        }
        let st = self.inner.state.read();
        if s.len() == 64 {
            let h: Hash = s.parse()?;
            return if st.row(&h).is_some() { Ok(h) } else { Err(Error::NotFound(h)) };
        }
        let mut found: Option<Hash> = None;
        for h in st.nodes.keys() {
            if h.to_hex().starts_with(&s) {
                if found.is_some() {
                    return Err(Error::AmbiguousPrefix(s));
                }
                found = Some(*h);
            }
        }
        found.ok_or(Error::NoMatch(s))
    }

    pub fn bm25(&self, question: &str, k: usize, filter: &LaneFilter<'_>) -> RankedList {
        fusion::bm25_lane(&self.inner.state.read(), question, k, filter)
    }

    pub fn vector_lane(&self, q: &[f32], k: usize, filter: &LaneFilter<'_>) -> Result<RankedList> {
        fusion::vector_lane(&self.inner.state.read(), q, k, filter)
    }

    pub fn entity_lane(&self, question: &str, filter: &LaneFilter<'_>) -> RankedList {
        fusion::entity_lane(&self.inner.state.read(), question, filter)
    }

    /// Run the enabled lanes over `filter` and fuse them.
    pub fn retrieve(
        &self,
        question: &str,
        qvec: Option<&[f32]>,
        opts: &RetrieveOptions,
        filter: &LaneFilter<'_>,
    ) -> Result<FusedResult> {
        fusion::retrieve(&self.inner.state.read(), question, qvec, opts, filter).map(|(f, _)| f)
    }

    pub fn consolidate(&self, config: &ConsolidatorConfig) -> Result<ConsolidationReport> {
        consolidator::run_pass(self, config)
    }

    /// Load nodes and edges in one transaction with the ANN graph deferred;
    /// call [`Engine::rebuild_index`] afterwards.
    pub fn bulk_load(&self, nodes: Vec<NodeDraft>, edges: impl FnOnce(&[Hash]) -> Vec<EdgeDraft>) -> Result<Vec<Hash>> {
        self.inner.state.write().vectors.defer();
        self.transact(|tx| {
            let mut ids = Vec::with_capacity(nodes.len());
            for n in nodes {
                ids.push(tx.put_node(n)?.id);
            }
            for e in edges(&ids) {
                tx.write_edge(e)?;
            }
            Ok(ids)
        })
    }

    /// Handler dispatches that reached an edge-row insert, over the
    /// engine's lifetime.
    pub fn handler_dispatches(&self) -> u64 {
        self.inner.dispatches.load(Ordering::Relaxed)
    }

    pub fn node_count(&self) -> usize {
        self.inner.state.read().node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.inner.state.read().edge_count()
    }

    pub fn store_size_bytes(&self) -> Option<u64> {
        self.inner.persist.lock().as_ref().map(Persist::size_bytes)
    }

    /// Make the next edge insert fail after its handler has run.
    #[cfg(feature = "fault-injection")]
    pub fn arm_fault(&self) {
        self.inner.fault.store(true, Ordering::SeqCst);
    }
}

fn recluster_inner(inner: &Inner, frontier: &[Hash]) -> Result<Vec<MergeProposal>> {
    let engine_now = inner.config.clock.now();
    let mut st = inner.state.write();
    let pairs = {
        let ctx = ResolveCtx {
            st: &st,
            now: engine_now,
            thresholds: inner.config.thresholds,
            tiebreaker: inner.config.tiebreaker.as_ref(),
            exclude: &|_| false,
        };
        resolver::recluster_pairs(&ctx, frontier)?
    };
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let registry = inner.registry.read().clone();
    let mut tx = Txn::begin(&mut st, inner, registry, engine_now);
    let mut staged = Vec::new();
    for (src, m) in pairs {
        if tx.state().pair_settled(src, m.id) {
            continue;
        }
        let id = tx.write_edge(EdgeDraft::new(EdgeType::SAME_AS, src, m.id).meta(TIER_KEY, m.tier.as_str()))?;
        staged.push(id);
    }
    if let Some(p) = inner.persist.lock().as_mut() {
        let (blobs, records) = tx.records();
        p.append(&blobs, &records)?;
    }
    tx.apply_derived()?;
    let proposals = staged.iter().filter_map(|id| tx.state().proposals.get(id).cloned()).collect();
    let (_, dispatches) = tx.finish();
    inner.dispatches.fetch_add(dispatches, Ordering::Relaxed);
    Ok(proposals)
}

fn worker(inner: Weak<Inner>, rx: mpsc::Receiver<Job>) {
    while let Ok(job) = rx.recv() {
        match job {
            Job::Frontier(frontier) => {
                let Some(inner) = inner.upgrade() else { return };
                if let Err(e) = recluster_inner(&inner, &frontier) {
                    log::warn!("recluster over {} nodes failed: {e}", frontier.len());
                }
            }
            Job::Flush(done) => {
                let _ = done.send(());
            }
        }
    }
}
