//! Agent memory tools over scope nodes. Memories are `Fact` nodes attached
//! to one or more `Scope` nodes by `contains` edges.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embed::{Embedder, HashingEmbedder};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::fusion::{Lane, LaneFilter, RetrieveOptions};
use crate::hash::{compute_node_id, Hash};
use crate::model::{EdgeDraft, EdgeStatus, EdgeType, NodeDraft, NodeType, Source};
use crate::reconciler::{CandidateEdge, CandidateNode, Extraction, NodeRef};
use crate::store::{Set, State, Txn};
use crate::time::{Timestamp, ValidityInterval};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 200;

/// The nine tool names, in advertised order.
pub const TOOL_NAMES: [&str; 9] = [
    "memory_write",
    "memory_recall",
    "memory_list",
    "memory_read",
    "memory_amend",
    "memory_retire",
    "memory_retire_all",
    "memory_purge_scope",
    "memory_list_scopes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeKind {
    User,
    Agent,
    App,
    Run,
}

impl ScopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScopeKind::User => "user",
            ScopeKind::Agent => "agent",
            ScopeKind::App => "app",
            ScopeKind::Run => "run",
        }
    }
}

impl FromStr for ScopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(ScopeKind::User),
            "agent" => Ok(ScopeKind::Agent),
            "app" => Ok(ScopeKind::App),
            "run" => Ok(ScopeKind::Run),
            _ => Err(Error::Parse(format!("unknown scope kind {s:?}"))),
        }
    }
}

/// An identity a memory can belong to. Serialized as `"kind:external_id"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scope {
    pub kind: ScopeKind,
    pub external_id: String,
}

impl Scope {
    pub fn new(kind: ScopeKind, external_id: impl Into<String>) -> Self {
        Self { kind, external_id: external_id.into() }
    }

    pub fn user(id: impl Into<String>) -> Self {
        Self::new(ScopeKind::User, id)
    }

    pub fn agent(id: impl Into<String>) -> Self {
        Self::new(ScopeKind::Agent, id)
    }

    pub fn name(&self) -> String {
        format!("{}:{}", self.kind.as_str(), self.external_id)
    }

    fn draft(&self) -> NodeDraft {
        NodeDraft::new(NodeType::SCOPE, self.name(), "")
            .created_at(Timestamp::EPOCH)
            .valid(ValidityInterval::open(Timestamp::EPOCH))
    }

    /// Deterministic node id: a `Scope` node named `kind:external_id`,
    /// empty content, created at the epoch.
    pub fn node(&self) -> Hash {
        compute_node_id(NodeType::SCOPE.as_str(), &self.name(), "", &[], &[], Timestamp::EPOCH)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, id) = s.split_once(':').ok_or_else(|| Error::Parse(format!("scope {s:?} is not kind:id")))?;
        if id.is_empty() {
            return Err(Error::Parse(format!("scope {s:?} has an empty id")));
        }
        Ok(Scope::new(kind.parse()?, id))
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: Hash,
    pub text: String,
    pub scopes: Vec<Scope>,
    pub t_valid: ValidityInterval,
    pub t_ingested: Timestamp,
    pub provenance: Vec<Source>,
    pub retired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallHit {
    pub memory: MemoryRecord,
    pub score: f64,
    pub lanes: Vec<Lane>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPage {
    pub items: Vec<MemoryRecord>,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeInfo {
    pub scope: Scope,
    pub node: Hash,
    pub memories: usize,
    pub retired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeCounts {
    pub scope_retired: bool,
    pub memories_retired: usize,
}

/// The memory tool surface over one engine.
#[derive(Debug, Clone)]
pub struct MemoryService {
    engine: Engine,
    embedder: Arc<dyn Embedder>,
}

fn memories_of(st: &State, scope: &Hash) -> Vec<Hash> {
    let mut out: Vec<Hash> = st
        .out_edges(scope)
        .filter(|e| e.edge_type == EdgeType::CONTAINS && e.status == EdgeStatus::Live)
        .map(|e| e.dst)
        .filter(|h| st.row(h).is_some_and(|r| r.node_type == NodeType::FACT))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn scopes_of(st: &State, memory: &Hash) -> Vec<Scope> {
    let mut out: Vec<Scope> = st
        .in_edges(memory)
        .filter(|e| e.edge_type == EdgeType::CONTAINS && e.status == EdgeStatus::Live)
        .filter_map(|e| st.row(&e.src))
        .filter(|r| r.node_type == NodeType::SCOPE)
        .filter_map(|r| r.name.parse().ok())
        .collect();
    out.sort();
    out.dedup();
    out
}

fn record(st: &State, id: &Hash, now: Timestamp) -> Option<MemoryRecord> {
    let row = st.row(id)?;
    Some(MemoryRecord {
        id: *id,
        text: row.content.clone(),
        scopes: scopes_of(st, id),
        t_valid: row.t_valid,
        t_ingested: row.t_ingested,
        provenance: row.provenance.clone(),
        retired: row.t_valid.is_closed_at(now),
    })
}

fn ensure_scopes(tx: &mut Txn<'_>, scopes: &[Scope]) -> Result<Vec<Hash>> {
    scopes.iter().map(|s| tx.put_node(s.draft()).map(|o| o.id)).collect()
}

impl MemoryService {
    /// Uses a hashing embedder sized to the engine's dimension.
    pub fn new(engine: Engine) -> Self {
        let dim = engine.config().dim;
        Self::with_embedder(engine, Arc::new(HashingEmbedder::new(dim)))
    }

    pub fn with_embedder(engine: Engine, embedder: Arc<dyn Embedder>) -> Self {
        Self { engine, embedder }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn embed(&self, text: &str) -> Option<Vec<f32>> {
        (self.embedder.dim() == self.engine.config().dim).then(|| self.embedder.embed(text)).flatten()
    }

    fn existing_scope(&self, scope: &Scope) -> Result<Hash> {
        let h = scope.node();
        if self.engine.contains_node(&h) {
            Ok(h)
        } else {
            Err(Error::UnknownScope(scope.name()))
        }
    }

    fn memory_id(&self, id_or_prefix: &str) -> Result<Hash> {
        let h = self.engine.resolve_prefix(id_or_prefix)?;
        let is_fact = self.engine.read(|st| st.row(&h).is_some_and(|r| r.node_type == NodeType::FACT));
        if is_fact {
            Ok(h)
        } else {
            Err(Error::NotFound(h))
        }
    }

    fn fact_extraction(&self, text: &str, origin: Option<&str>) -> Extraction {
        let mut ex = Extraction::session(origin.unwrap_or("memory_write"), None);
        let mut fact = CandidateNode::new(NodeType::FACT, "", text);
        fact.embedding = self.embed(text);
        ex.node(fact);
        ex
    }

    /// Store `text` as one memory in every named scope.
    pub fn write(&self, text: &str, scopes: &[Scope], origin: Option<&str>) -> Result<MemoryRecord> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let ex = self.fact_extraction(text, origin);
        let written = self.write_extraction(ex, scopes)?;
        written.into_iter().next().ok_or(Error::EmptyText)
    }

    /// Ingest a caller-built extraction and attach every resulting Fact to
    /// the scopes.
    pub fn write_extraction(&self, ex: Extraction, scopes: &[Scope]) -> Result<Vec<MemoryRecord>> {
        if scopes.is_empty() {
            return Err(Error::EmptyScopes);
        }
        let mut facts = Vec::new();
        self.engine.ingest_with(ex, |tx, report| {
            let scope_ids = ensure_scopes(tx, scopes)?;
            for id in &report.ids {
                if tx.row(id).is_some_and(|r| r.node_type == NodeType::FACT) && !facts.contains(id) {
                    facts.push(*id);
                }
            }
            for f in &facts {
                for s in &scope_ids {
                    tx.write_edge(EdgeDraft::new(EdgeType::CONTAINS, *s, *f).valid_from(tx.now()))?;
                }
            }
            Ok(())
        })?;
        let now = self.engine.now();
        Ok(self.engine.read(|st| facts.iter().filter_map(|f| record(st, f, now)).collect()))
    }

    /// Hybrid retrieval restricted to memories of the named scopes.
    pub fn recall(&self, query: &str, scopes: &[Scope], k: usize, include_retired: bool) -> Result<Vec<RecallHit>> {
        if scopes.is_empty() {
            return Err(Error::EmptyScopes);
        }
        let scope_ids = scopes.iter().map(|s| self.existing_scope(s)).collect::<Result<Vec<_>>>()?;
        let qvec = self.embed(query);
        let now = self.engine.now();
        self.engine.read(|st| {
            let allowed: Set<Hash> = scope_ids.iter().flat_map(|s| memories_of(st, s)).collect();
            let filter = LaneFilter::new(now).types([NodeType::FACT]).allowed(&allowed).include_retired(include_retired);
            let k = k.max(1);
            let opts = RetrieveOptions { k_per_lane: k, top: k, ..RetrieveOptions::default() };
            let (fused, _) = crate::fusion::retrieve(st, query, qvec.as_deref(), &opts, &filter)?;
            Ok(fused
                .entries
                .into_iter()
                .filter_map(|e| record(st, &e.id, now).map(|memory| RecallHit { memory, score: e.score, lanes: e.lanes }))
                .collect())
        })
    }

    /// Newest first, then by id.
    pub fn list(&self, scope: &Scope, page: usize, page_size: usize, include_retired: bool) -> Result<MemoryPage> {
        let sid = self.existing_scope(scope)?;
        let page_size = if page_size == 0 { DEFAULT_PAGE_SIZE } else { page_size.min(MAX_PAGE_SIZE) };
        let now = self.engine.now();
        Ok(self.engine.read(|st| {
            let mut all: Vec<MemoryRecord> =
                memories_of(st, &sid).iter().filter_map(|m| record(st, m, now)).filter(|r| include_retired || !r.retired).collect();
            all.sort_by(|a, b| b.t_ingested.cmp(&a.t_ingested).then(a.id.cmp(&b.id)));
            let total = all.len();
            let items = all.into_iter().skip(page.saturating_mul(page_size)).take(page_size).collect();
            MemoryPage { items, total, page, page_size }
        }))
    }

    pub fn read(&self, id_or_prefix: &str) -> Result<MemoryRecord> {
        let id = self.memory_id(id_or_prefix)?;
        let now = self.engine.now();
        self.engine.read(|st| record(st, &id, now)).ok_or(Error::NotFound(id))
    }

    /// New memory plus `supersedes(new → old)`; the old content is untouched.
    pub fn amend(&self, id_or_prefix: &str, new_text: &str) -> Result<MemoryRecord> {
        if new_text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let old = self.memory_id(id_or_prefix)?;
        let scopes = self.engine.read(|st| scopes_of(st, &old));
        let mut ex = self.fact_extraction(new_text, Some("memory_amend"));
        ex.edge(CandidateEdge::new(EdgeType::SUPERSEDES, NodeRef::Local(0), NodeRef::Existing(old)));
        if scopes.is_empty() {
            let report = self.engine.ingest(ex)?;
            return self.read(&report.ids[0].to_hex());
        }
        let written = self.write_extraction(ex, &scopes)?;
        written.into_iter().next().ok_or(Error::NotFound(old))
    }

    /// Close one memory's validity now. Returns 1 if it was open.
    pub fn retire(&self, id_or_prefix: &str) -> Result<usize> {
        let id = self.memory_id(id_or_prefix)?;
        self.engine.transact(|tx| {
            let now = tx.now();
            Ok(usize::from(tx.close_node_validity(id, now)?))
        })
    }

    /// Close every open memory in the scope. Returns how many were open.
    pub fn retire_all(&self, scope: &Scope) -> Result<usize> {
        let sid = self.existing_scope(scope)?;
        self.engine.transact(|tx| {
            let now = tx.now();
            let members = memories_of(tx.state(), &sid);
            let mut n = 0;
            for m in members {
                if !tx.row(&m).expect("member exists").t_valid.is_closed_at(now) && tx.close_node_validity(m, now)? {
                    n += 1;
                }
            }
            Ok(n)
        })
    }

    /// Retire the scope node and all its memories. Blobs stay readable.
    pub fn purge_scope(&self, scope: &Scope, confirm: bool) -> Result<PurgeCounts> {
        if !confirm {
            return Err(Error::ConfirmationRequired);
        }
        let sid = self.existing_scope(scope)?;
        let memories_retired = self.retire_all(scope)?;
        let scope_retired = self.engine.transact(|tx| {
            let now = tx.now();
            tx.close_node_validity(sid, now)
        })?;
        Ok(PurgeCounts { scope_retired, memories_retired })
    }

    pub fn list_scopes(&self, kind: Option<ScopeKind>, include_retired: bool) -> Vec<ScopeInfo> {
        let now = self.engine.now();
        self.engine.read(|st| {
            let mut out: Vec<ScopeInfo> = st
                .of_type(&NodeType::SCOPE)
                .iter()
                .filter_map(|h| {
                    let row = st.row(h)?;
                    let scope: Scope = row.name.parse().ok()?;
                    let retired = row.t_valid.is_closed_at(now);
                    let keep = kind.map_or(true, |k| scope.kind == k) && (include_retired || !retired);
                    keep.then(|| ScopeInfo { memories: memories_of(st, h).len(), scope, node: *h, retired })
                })
                .collect();
            out.sort_by(|a, b| a.scope.cmp(&b.scope));
            out
        })
    }

    /// JSON schema descriptors for the nine tools.
    pub fn tool_descriptors() -> Vec<Value> {
        let scopes = json!({"type": "array", "items": {"type": "string", "description": "kind:id, kind in user|agent|app|run"}});
        let id = json!({"type": "string", "description": "full hex id or a unique prefix of at least 4 characters"});
        let schema = |props: Value, required: &[&str]| json!({"type": "object", "properties": props, "required": required});
        vec![
            json!({"name": "memory_write", "description": "Save text for one or more scopes through the resolver.",
                "inputSchema": schema(json!({"text": {"type": "string"}, "scopes": scopes, "origin": {"type": "string"}}), &["text", "scopes"])}),
            json!({"name": "memory_recall", "description": "Hybrid lexical, vector and entity-graph recall within scopes.",
                "inputSchema": schema(json!({"query": {"type": "string"}, "scopes": scopes, "k": {"type": "integer"}, "include_retired": {"type": "boolean"}}), &["query", "scopes"])}),
            json!({"name": "memory_list", "description": "Enumerate memories in a scope with pagination.",
                "inputSchema": schema(json!({"scope": {"type": "string"}, "page": {"type": "integer"}, "page_size": {"type": "integer"}, "include_retired": {"type": "boolean"}}), &["scope"])}),
            json!({"name": "memory_read", "description": "Fetch one memory by id.",
                "inputSchema": schema(json!({"id": id}), &["id"])}),
            json!({"name": "memory_amend", "description": "Write a replacement memory that supersedes the old one.",
                "inputSchema": schema(json!({"id": id, "text": {"type": "string"}}), &["id", "text"])}),
            json!({"name": "memory_retire", "description": "Close one memory's validity window.",
                "inputSchema": schema(json!({"id": id}), &["id"])}),
            json!({"name": "memory_retire_all", "description": "Close the validity of every memory in a scope.",
                "inputSchema": schema(json!({"scope": {"type": "string"}}), &["scope"])}),
            json!({"name": "memory_purge_scope", "description": "Retire a scope and its memories. Requires confirm=true.",
                "inputSchema": schema(json!({"scope": {"type": "string"}, "confirm": {"type": "boolean"}}), &["scope", "confirm"])}),
            json!({"name": "memory_list_scopes", "description": "Enumerate scopes, optionally by kind.",
                "inputSchema": schema(json!({"kind": {"type": "string"}, "include_retired": {"type": "boolean"}}), &[])}),
        ]
    }

    /// Dispatch one tool call with JSON arguments.
    pub fn call_tool(&self, name: &str, args: &Value) -> Result<Value> {
        #[derive(Deserialize)]
        struct Write {
            text: String,
            scopes: Vec<Scope>,
            #[serde(default)]
            origin: Option<String>,
        }
        #[derive(Deserialize)]
        struct Recall {
            query: String,
            scopes: Vec<Scope>,
            #[serde(default = "default_k")]
            k: usize,
            #[serde(default)]
            include_retired: bool,
        }
        #[derive(Deserialize)]
        struct List {
            scope: Scope,
            #[serde(default)]
            page: usize,
            #[serde(default)]
            page_size: usize,
            #[serde(default)]
            include_retired: bool,
        }
        #[derive(Deserialize)]
        struct Id {
            id: String,
        }
        #[derive(Deserialize)]
        struct Amend {
            id: String,
            text: String,
        }
        #[derive(Deserialize)]
        struct ScopeArg {
            scope: Scope,
        }
        #[derive(Deserialize)]
        struct Purge {
            scope: Scope,
            #[serde(default)]
            confirm: bool,
        }
        #[derive(Deserialize)]
        struct Scopes {
            #[serde(default)]
            kind: Option<String>,
            #[serde(default)]
            include_retired: bool,
        }
        fn default_k() -> usize {
            10
        }
        fn parse<T: serde::de::DeserializeOwned>(args: &Value) -> Result<T> {
            Ok(serde_json::from_value(if args.is_null() { json!({}) } else { args.clone() })?)
        }
        Ok(match name {
            "memory_write" => {
                let a: Write = parse(args)?;
                serde_json::to_value(self.write(&a.text, &a.scopes, a.origin.as_deref())?)?
            }
            "memory_recall" => {
                let a: Recall = parse(args)?;
                serde_json::to_value(self.recall(&a.query, &a.scopes, a.k, a.include_retired)?)?
            }
            "memory_list" => {
                let a: List = parse(args)?;
                serde_json::to_value(self.list(&a.scope, a.page, a.page_size, a.include_retired)?)?
            }
            "memory_read" => serde_json::to_value(self.read(&parse::<Id>(args)?.id)?)?,
            "memory_amend" => {
                let a: Amend = parse(args)?;
                serde_json::to_value(self.amend(&a.id, &a.text)?)?
            }
            "memory_retire" => json!({"retired": self.retire(&parse::<Id>(args)?.id)?}),
            "memory_retire_all" => json!({"retired": self.retire_all(&parse::<ScopeArg>(args)?.scope)?}),
            "memory_purge_scope" => {
                let a: Purge = parse(args)?;
                serde_json::to_value(self.purge_scope(&a.scope, a.confirm)?)?
            }
            "memory_list_scopes" => {
                let a: Scopes = parse(args)?;
                let kind = a.kind.as_deref().map(str::parse).transpose()?;
                serde_json::to_value(self.list_scopes(kind, a.include_retired))?
            }
            other => return Err(Error::Parse(format!("unknown tool {other:?}"))),
        })
    }
}

/// Scope names of a memory; exposed for callers building their own views.
pub fn memory_scopes(st: &State, memory: &Hash) -> BTreeSet<Scope> {
    scopes_of(st, memory).into_iter().collect()
}
