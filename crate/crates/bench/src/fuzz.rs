//! Randomized write workload with periodic invariant checks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use worldmem_core::consolidator::ConsolidatorConfig;
use worldmem_core::reconciler::{CandidateEdge, CandidateNode, Extraction, NodeRef};
use worldmem_core::store::{NodeEdit, State};
use worldmem_core::{
    EdgeDraft, EdgeStatus, EdgeType, Engine, EngineConfig, Error, Hash, ManualClock, NodeDraft, NodeType,
    ProposalStatus, ReclusterMode, Timestamp, ValidityInterval,
};

pub const DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Ingest,
    Supersede,
    Contradict,
    AcceptMerge,
    RejectMerge,
    RandomEdge,
    DeleteEdge,
    Retire,
    Rewrite,
    Embed,
    Consolidate,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::Ingest,
        OpKind::Supersede,
        OpKind::Contradict,
        OpKind::AcceptMerge,
        OpKind::RejectMerge,
        OpKind::RandomEdge,
        OpKind::DeleteEdge,
        OpKind::Retire,
        OpKind::Rewrite,
        OpKind::Embed,
        OpKind::Consolidate,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub seed: u64,
    pub n_ops: usize,
    pub check_every: usize,
    /// Relative weight per operation; every weight must be positive.
    pub weights: BTreeMap<OpKind, u32>,
}

impl FuzzConfig {
    pub fn new(seed: u64, n_ops: usize) -> Self {
        let weights = [
            (OpKind::Ingest, 30),
            (OpKind::Supersede, 10),
            (OpKind::Contradict, 6),
            (OpKind::AcceptMerge, 8),
            (OpKind::RejectMerge, 5),
            (OpKind::RandomEdge, 15),
            (OpKind::DeleteEdge, 4),
            (OpKind::Retire, 4),
            (OpKind::Rewrite, 4),
            (OpKind::Embed, 6),
            (OpKind::Consolidate, 1),
        ]
        .into_iter()
        .collect();
        Self { seed, n_ops, check_every: 100, weights }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Number of operations applied when the check ran.
    pub op_index: usize,
    pub invariant: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub ops: usize,
    pub checks: usize,
    pub nodes: usize,
    pub edges: usize,
    /// `(ok, refused)` per operation kind.
    pub outcomes: BTreeMap<OpKind, (usize, usize)>,
    /// Digest of the full op trace; equal seeds give equal digests.
    pub trace_digest: String,
    pub violations: Vec<Violation>,
}

const FIRST: [&str; 12] =
    ["Sarah", "Phillip", "Katherine", "Jon", "Mohammed", "Aisha", "Stephen", "Claire", "Mikhail", "Yuki", "Rafael", "Ingrid"];
const LAST: [&str; 8] = ["Chen", "Smith", "Garcia", "Okafor", "Ivanova", "Tanaka", "Muller", "Silva"];
const WORDS: [&str; 16] = [
    "launch", "budget", "meeting", "contract", "design", "review", "hiring", "roadmap", "outage", "pricing", "travel",
    "report", "deadline", "vendor", "offsite", "migration",
];

/// Misspell a name the way extractors and users do.
fn variant(rng: &mut ChaCha8Rng, name: &str) -> String {
    match rng.random_range(0..6) {
        0 => name.to_lowercase(),
        1 => name.replacen("ph", "f", 1).replacen("Ph", "F", 1),
        2 if name.len() > 4 => {
            let mut c: Vec<char> = name.chars().collect();
            let i = rng.random_range(1..c.len() - 1);
            c.swap(i, i + 1);
            c.into_iter().collect()
        }
        3 => format!("{name}s"),
        _ => name.to_string(),
    }
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let v: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

fn near(rng: &mut ChaCha8Rng, base: &[f32]) -> Vec<f32> {
    let v: Vec<f64> = base.iter().map(|x| *x as f64 + rng.random_range(-0.05..0.05)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Validity bounds remembered between checks.
type Bounds = HashMap<Hash, (Timestamp, Option<Timestamp>)>;

pub struct Fuzzer {
    cfg: FuzzConfig,
    engine: Engine,
    clock: Arc<ManualClock>,
    rng: ChaCha8Rng,
    table: Vec<(OpKind, u32)>,
    total_weight: u32,
    persons: Vec<(String, Vec<f32>)>,
    ops: usize,
    checks: usize,
    outcomes: BTreeMap<OpKind, (usize, usize)>,
    trace: blake3::Hasher,
    node_bounds: Bounds,
    edge_bounds: Bounds,
    violations: Vec<Violation>,
}

impl Fuzzer {
    pub fn new(cfg: FuzzConfig) -> Self {
        assert!(cfg.weights.values().all(|w| *w > 0), "fuzz weights must be positive");
        let clock = Arc::new(ManualClock::stepping(Timestamp::from_secs(1_700_000_000), 1_000));
        let engine = Engine::in_memory(EngineConfig::new(DIM).clock(clock.clone()).recluster(ReclusterMode::Inline));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let persons = FIRST
            .iter()
            .flat_map(|f| LAST.iter().map(move |l| format!("{f} {l}")))
            .map(|n| (n, random_vec(&mut rng)))
            .collect();
        let table: Vec<(OpKind, u32)> = cfg.weights.iter().map(|(k, w)| (*k, *w)).collect();
        let total_weight = table.iter().map(|(_, w)| w).sum();
        Self {
            cfg,
            engine,
            clock,
            rng,
            table,
            total_weight,
            persons,
            ops: 0,
            checks: 0,
            outcomes: BTreeMap::new(),
            trace: blake3::Hasher::new(),
            node_bounds: HashMap::new(),
            edge_bounds: HashMap::new(),
            violations: Vec::new(),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn pick_kind(&mut self) -> OpKind {
        let mut r = self.rng.random_range(0..self.total_weight);
        for (k, w) in &self.table {
            if r < *w {
                return *k;
            }
            r -= w;
        }
        unreachable!("weights cover the range")
    }

    fn sorted_nodes(&self, filter: impl Fn(&State, &Hash) -> bool) -> Vec<Hash> {
        self.engine.read(|st| {
            let mut v: Vec<Hash> = st.node_ids().filter(|h| filter(st, h)).copied().collect();
            v.sort_unstable();
            v
        })
    }

    fn any_node(&mut self) -> Option<Hash> {
        let all = self.sorted_nodes(|_, _| true);
        all.choose(&mut self.rng).copied()
    }

    fn any_fact(&mut self) -> Option<Hash> {
        let facts = self.sorted_nodes(|st, h| st.row(h).is_some_and(|r| r.node_type == NodeType::FACT));
        facts.choose(&mut self.rng).copied()
    }

    fn pending(&mut self) -> Option<Hash> {
        let p: Vec<Hash> = self.engine.proposals(Some(ProposalStatus::Pending)).iter().map(|p| p.id).collect();
        p.choose(&mut self.rng).copied()
    }

    fn recent(&mut self) -> Timestamp {
        let back = self.rng.random_range(0..5_000_000);
        Timestamp::from_micros(self.clock.peek().micros() - back)
    }

    fn ingest(&mut self) -> Result<Hash, Error> {
        let mut ex = Extraction::session(format!("fuzz-{}", self.ops), None);
        let mut people = Vec::new();
        for _ in 0..self.rng.random_range(1..=3) {
            let i = self.rng.random_range(0..self.persons.len());
            let (name, v) = self.persons[i].clone();
            let shown = variant(&mut self.rng, &name);
            let emb = near(&mut self.rng, &v);
            people.push(ex.node(CandidateNode::new(NodeType::ENTITY, shown, "").embedding(emb)));
        }
        let topic = WORDS.choose(&mut self.rng).copied().unwrap_or("note");
        let other = WORDS.choose(&mut self.rng).copied().unwrap_or("note");
        let text = format!("{topic} {other} update {}", self.rng.random_range(0..1000));
        let from = self.recent();
        let fact = ex.node(CandidateNode::new(NodeType::FACT, "", text).valid(ValidityInterval::open(from)));
        for p in &people {
            ex.edge(CandidateEdge::new(EdgeType::REFERS_TO, fact, *p).valid_from(from));
        }
        if self.rng.random_bool(0.15) {
            if let Some(old) = self.any_fact() {
                ex.edge(CandidateEdge::new(EdgeType::SUPERSEDES, fact, NodeRef::Existing(old)).valid_from(self.clock.peek()));
            }
        }
        let report = self.engine.ingest(ex)?;
        Ok(report.ids.last().copied().unwrap_or_default())
    }

    fn supersede(&mut self) -> Result<Hash, Error> {
        let old = self.any_fact().ok_or(Error::EmptyStartSet)?;
        let text = format!("revised {}", self.rng.random_range(0..10_000));
        self.engine.transact(|tx| {
            let now = tx.now();
            let new = tx.put_node(NodeDraft::new(NodeType::FACT, "", text).valid(ValidityInterval::open(now)))?.id;
            tx.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, new, old).valid_from(now))
        })
    }

    fn random_edge(&mut self) -> Result<Hash, Error> {
        let types = [
            EdgeType::REFERS_TO,
            EdgeType::PRECEDES,
            EdgeType::CAUSES,
            EdgeType::SUBTYPE_OF,
            EdgeType::SAME_AS,
            EdgeType::SUPERSEDES,
            EdgeType::CONTRADICTS,
            EdgeType::new("nonexistent_type"),
        ];
        let t = types.choose(&mut self.rng).cloned().unwrap_or(EdgeType::REFERS_TO);
        let a = self.any_node().ok_or(Error::EmptyStartSet)?;
        let b = self.any_node().ok_or(Error::EmptyStartSet)?;
        let from = self.recent();
        self.engine.write_edge(EdgeDraft::new(t, a, b).valid_from(from)).map(|o| o.id)
    }

    fn apply(&mut self, kind: OpKind) -> Result<Hash, Error> {
        match kind {
            OpKind::Ingest => self.ingest(),
            OpKind::Supersede => self.supersede(),
            OpKind::Contradict => {
                let a = self.any_fact().ok_or(Error::EmptyStartSet)?;
                let b = self.any_fact().ok_or(Error::EmptyStartSet)?;
                self.engine.write_edge(EdgeDraft::new(EdgeType::CONTRADICTS, a, b)).map(|o| o.id)
            }
            OpKind::AcceptMerge => {
                let p = self.pending().ok_or(Error::EmptyStartSet)?;
                self.engine.accept_merge(p).map(|p| p.id)
            }
            OpKind::RejectMerge => {
                let p = self.pending().ok_or(Error::EmptyStartSet)?;
                self.engine.reject_merge(p).map(|p| p.id)
            }
            OpKind::RandomEdge => self.random_edge(),
            OpKind::DeleteEdge => {
                let mut ids: Vec<Hash> = self.engine.read(|st| st.all_edges().map(|e| e.id).collect());
                ids.sort_unstable();
                let id = *ids.choose(&mut self.rng).ok_or(Error::EmptyStartSet)?;
                self.engine.delete_edge(id).map(|e| e.id)
            }
            OpKind::Retire => {
                let n = self.any_node().ok_or(Error::EmptyStartSet)?;
                let at = self.recent();
                self.engine.close_validity(n, at).map(|_| n)
            }
            OpKind::Rewrite => {
                let n = self.any_node().ok_or(Error::EmptyStartSet)?;
                let edit = NodeEdit { content: Some(format!("edited {}", self.ops)), ..NodeEdit::default() };
                let pairs = self.engine.rewrite_with_edit(n, edit)?;
                Ok(pairs.first().map(|p| p.1).unwrap_or(n))
            }
            OpKind::Embed => {
                let n = self.any_node().ok_or(Error::EmptyStartSet)?;
                let v = random_vec(&mut self.rng);
                if self.rng.random_bool(0.5) {
                    self.engine.upsert_content(n, v).map(|_| n)
                } else {
                    self.engine.set_effective(n, v).map(|_| n)
                }
            }
            OpKind::Consolidate => {
                let cfg = ConsolidatorConfig { min_age_secs: 0, ..ConsolidatorConfig::default() };
                let r = self.engine.consolidate(&cfg)?;
                Ok(r.summaries.first().or(r.inferred.first()).copied().unwrap_or_default())
            }
        }
    }

    /// Apply one random operation. A refused operation must leave the store
    /// exactly as it was.
    pub fn step(&mut self) {
        let kind = self.pick_kind();
        let before = (self.engine.node_count(), self.engine.edge_count(), self.engine.handler_dispatches());
        let result = self.apply(kind);
        self.ops += 1;
        let slot = self.outcomes.entry(kind).or_default();
        self.trace.update(format!("{kind:?}").as_bytes());
        match &result {
            Ok(h) => {
                slot.0 += 1;
                self.trace.update(h.as_bytes());
            }
            Err(e) => {
                slot.1 += 1;
                self.trace.update(e.to_string().as_bytes());
                let after = (self.engine.node_count(), self.engine.edge_count(), self.engine.handler_dispatches());
                if after != before {
                    self.flag("atomicity", format!("refused {kind:?} ({e}) changed counts {before:?} -> {after:?}"));
                }
            }
        }
        if self.ops % self.cfg.check_every.max(1) == 0 {
            let found = self.check();
            self.violations.extend(found);
        }
    }

    fn flag(&mut self, invariant: &str, detail: String) {
        self.violations.push(Violation { op_index: self.ops, invariant: invariant.into(), detail });
    }

    /// Evaluate every invariant against the current store.
    pub fn check(&mut self) -> Vec<Violation> {
        self.checks += 1;
        let at = self.ops;
        let mut out = Vec::new();
        let mut v = |invariant: &str, detail: String| {
            out.push(Violation { op_index: at, invariant: invariant.into(), detail });
        };
        let (node_now, edge_now) = self.engine.read(|st| {
            for h in st.node_ids() {
                if let Err(e) = st.verify(h) {
                    v("content_hash_roundtrip", format!("{h}: {e}"));
                }
            }
            let nodes: Bounds = st.node_ids().map(|h| (*h, st.row(h).map(|r| (r.t_valid.from, r.t_valid.to)).unwrap())).collect();
            let edges: Bounds = st.all_edges().map(|e| (e.id, (e.t_valid.from, e.t_valid.to))).collect();
            for e in st.all_edges() {
                if e.edge_type == EdgeType::SUPERSEDES && e.status == EdgeStatus::Live {
                    let closed = st.row(&e.dst).and_then(|r| r.t_valid.to).is_some_and(|to| to <= e.t_valid.from);
                    if !closed {
                        v("supersession_closes_target", format!("edge {} leaves {} open", e.id, e.dst));
                    }
                }
            }
            let mut neighbours: Vec<&Hash> = st.node_ids().collect();
            neighbours.sort_unstable();
            for h in neighbours {
                for n in st.accepted_neighbors(h) {
                    if !st.accepted_neighbors(n).contains(h) {
                        v("same_as_symmetry", format!("{h} -> {n} has no reverse"));
                    }
                }
            }
            (nodes, edges)
        });
        for (kind, now, prev) in [("node", &node_now, &self.node_bounds), ("edge", &edge_now, &self.edge_bounds)] {
            for (h, (from, to)) in now {
                if to.is_some_and(|t| t < *from) {
                    v("validity_well_formed", format!("{kind} {h} ends before it starts"));
                }
                match (prev.get(h), to) {
                    (Some((pf, _)), _) if pf != from => v("validity_monotone", format!("{kind} {h} moved its start")),
                    (Some((_, Some(_))), None) => v("validity_monotone", format!("{kind} {h} reopened")),
                    (Some((_, Some(p))), Some(t)) if t > p => v("validity_monotone", format!("{kind} {h} was extended")),
                    _ => {}
                }
            }
            for h in prev.keys() {
                if !now.contains_key(h) {
                    v("immutability", format!("{kind} {h} disappeared"));
                }
            }
        }
        let proposals = self.engine.proposals(None);
        let issues: Vec<(String, String)> = self.engine.read(|st| {
            let mut issues = Vec::new();
            for p in &proposals {
                let edge_ok = st.edge(&p.id).is_some_and(|e| {
                    e.edge_type == EdgeType::SAME_AS && BTreeSet::from([e.src, e.dst]) == BTreeSet::from([p.left, p.right])
                });
                if !edge_ok || st.row(&p.left).is_none() || st.row(&p.right).is_none() {
                    issues.push(("proposal_provenance".into(), format!("proposal {} is orphaned", p.id)));
                }
                if (p.status == ProposalStatus::Pending) == p.decided_at.is_some() {
                    issues.push(("proposal_provenance".into(), format!("proposal {} decision time mismatch", p.id)));
                }
                if p.status == ProposalStatus::Accepted && !st.accepted_neighbors(&p.left).contains(&p.right) {
                    issues.push(("same_as_symmetry".into(), format!("accepted {} missing from identity", p.id)));
                }
            }
            issues
        });
        for (i, d) in issues {
            v(&i, d);
        }
        let stats = self.engine.index_stats();
        let nodes = self.engine.node_count();
        if stats.live > nodes {
            v("ann_size", format!("index holds {} vectors for {nodes} nodes", stats.live));
        }
        let (edges, dispatches) = (self.engine.edge_count() as u64, self.engine.handler_dispatches());
        if edges != dispatches {
            v("never_appends", format!("{edges} edges but {dispatches} handler dispatches"));
        }
        self.node_bounds = node_now;
        self.edge_bounds = edge_now;
        out
    }

    pub fn run(mut self) -> FuzzReport {
        while self.ops < self.cfg.n_ops {
            self.step();
        }
        if self.ops % self.cfg.check_every.max(1) != 0 {
            let found = self.check();
            self.violations.extend(found);
        }
        self.report()
    }

    pub fn report(&self) -> FuzzReport {
        FuzzReport {
            seed: self.cfg.seed,
            ops: self.ops,
            checks: self.checks,
            nodes: self.engine.node_count(),
            edges: self.engine.edge_count(),
            outcomes: self.outcomes.clone(),
            trace_digest: self.trace.clone().finalize().to_hex().to_string(),
            violations: self.violations.clone(),
        }
    }
}

pub fn run_fuzz(cfg: FuzzConfig) -> FuzzReport {
    Fuzzer::new(cfg).run()
}
