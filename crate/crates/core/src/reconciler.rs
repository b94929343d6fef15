//! Extraction ingest: resolve each candidate, put new nodes, route every
//! candidate edge through its handler. One extraction is one transaction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handlers::TIER_KEY;
use crate::hash::Hash;
use crate::model::{EdgeDraft, EdgeType, NodeDraft, NodeType, ProposalStatus, Source, Tier};
use crate::resolver::{Candidate, Match, Resolution, ResolveCtx, Thresholds, Tiebreaker};
use crate::store::Txn;
use crate::time::{Timestamp, ValidityInterval};

/// A candidate by position in the extraction or an already stored node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Local(usize),
    Existing(Hash),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateNode {
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub name: String,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub t_valid: Option<ValidityInterval>,
    #[serde(default)]
    pub created_at: Option<Timestamp>,
    #[serde(default)]
    pub provenance: Vec<Source>,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    /// Children must reference earlier candidates or stored nodes.
    #[serde(default)]
    pub children: Vec<NodeRef>,
}

impl CandidateNode {
    pub fn new(node_type: impl Into<NodeType>, name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            node_type: node_type.into(),
            name: name.into(),
            content: content.into(),
            aliases: Vec::new(),
            t_valid: None,
            created_at: None,
            provenance: Vec::new(),
            embedding: None,
            children: Vec::new(),
        }
    }

    pub fn valid(mut self, t_valid: ValidityInterval) -> Self {
        self.t_valid = Some(t_valid);
        self
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.aliases.push(alias.into());
        self
    }

    pub fn embedding(mut self, v: Vec<f32>) -> Self {
        self.embedding = Some(v);
        self
    }

    pub fn child(mut self, r: NodeRef) -> Self {
        self.children.push(r);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEdge {
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub src: NodeRef,
    pub dst: NodeRef,
    #[serde(default)]
    pub t_valid: Option<ValidityInterval>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl CandidateEdge {
    pub fn new(edge_type: impl Into<EdgeType>, src: NodeRef, dst: NodeRef) -> Self {
        Self { edge_type: edge_type.into(), src, dst, t_valid: None, metadata: BTreeMap::new() }
    }

    pub fn valid_from(mut self, from: Timestamp) -> Self {
        self.t_valid = Some(ValidityInterval::open(from));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    #[serde(default)]
    pub origin: String,
    /// Default creation time for candidates that carry none.
    #[serde(default)]
    pub date: Option<Timestamp>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    #[serde(default)]
    pub nodes: Vec<CandidateNode>,
    #[serde(default)]
    pub edges: Vec<CandidateEdge>,
    #[serde(default)]
    pub session: SessionMeta,
}

impl Extraction {
    pub fn session(origin: impl Into<String>, date: Option<Timestamp>) -> Self {
        Self { nodes: Vec::new(), edges: Vec::new(), session: SessionMeta { origin: origin.into(), date } }
    }

    /// Append a candidate and return its local reference.
    pub fn node(&mut self, n: CandidateNode) -> NodeRef {
        self.nodes.push(n);
        NodeRef::Local(self.nodes.len() - 1)
    }

    pub fn edge(&mut self, e: CandidateEdge) {
        self.edges.push(e);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCandidate {
    pub candidate: usize,
    pub id: Hash,
    pub tier: Tier,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Stored node per candidate, in candidate order.
    pub ids: Vec<Hash>,
    /// Candidates written as nodes (including content-identical re-puts).
    pub created: Vec<Hash>,
    /// The subset of `created` whose content already existed.
    pub deduplicated: Vec<Hash>,
    pub resolved: Vec<ResolvedCandidate>,
    pub edges: Vec<Hash>,
    pub proposals_staged: Vec<Hash>,
    pub validity_closures: Vec<(Hash, Timestamp)>,
    pub contradictions_flagged: Vec<Hash>,
}

fn validate(ex: &Extraction, tx: &Txn<'_>) -> Result<()> {
    if ex.nodes.is_empty() && ex.edges.is_empty() {
        return Err(Error::InvalidExtraction("no candidates".into()));
    }
    let check = |r: &NodeRef, limit: usize| -> Result<()> {
        match r {
            NodeRef::Local(i) if *i >= limit => {
                Err(Error::InvalidExtraction(format!("local reference {i} out of range")))
            }
            NodeRef::Existing(h) if tx.row(h).is_none() => Err(Error::DanglingEndpoint(*h)),
            _ => Ok(()),
        }
    };
    for (i, n) in ex.nodes.iter().enumerate() {
        for c in &n.children {
            check(c, i)?;
        }
    }
    for e in &ex.edges {
        check(&e.src, ex.nodes.len())?;
        check(&e.dst, ex.nodes.len())?;
    }
    Ok(())
}

pub(crate) fn ingest_in(
    tx: &mut Txn<'_>,
    ex: Extraction,
    thresholds: Thresholds,
    tiebreaker: &dyn Tiebreaker,
) -> Result<IngestReport> {
    validate(&ex, tx)?;
    let now = tx.now();
    let mut report = IngestReport::default();
    let session_source = (!ex.session.origin.is_empty()).then(|| Source::new(ex.session.origin.clone(), now));
    let resolve_of = |n: &NodeRef, ids: &[Hash]| match n {
        NodeRef::Local(i) => ids[*i],
        NodeRef::Existing(h) => *h,
    };
    let mut pending: Vec<(Hash, Match)> = Vec::new();

    for (i, cand) in ex.nodes.into_iter().enumerate() {
        let mut provenance = cand.provenance.clone();
        if let Some(s) = &session_source {
            if !provenance.contains(s) {
                provenance.push(s.clone());
            }
        }
        let resolution = if tx.state().is_resolvable(&cand.node_type) && cand.children.is_empty() {
            let rc = Candidate {
                name: cand.name.clone(),
                aliases: cand.aliases.clone(),
                node_type: cand.node_type.clone(),
                embedding: cand.embedding.clone(),
                content: cand.content.clone(),
            };
            let ctx = ResolveCtx {
                st: tx.state(),
                now,
                thresholds,
                tiebreaker,
                exclude: &|_| false,
            };
            ctx.resolve(&rc)?
        } else {
            Resolution::New
        };
        if let Resolution::Resolved(m) = resolution {
            if m.tier == Tier::Exact {
                tx.merge_provenance(m.id, &provenance, &cand.aliases)?;
                if let Some(v) = cand.embedding {
                    if tx.state().embedding(&m.id).is_none() {
                        tx.upsert_content(m.id, v)?;
                    }
                }
                report.ids.push(m.id);
                report.resolved.push(ResolvedCandidate { candidate: i, id: m.id, tier: m.tier });
                continue;
            }
        }
        let children: Vec<Hash> = cand.children.iter().map(|c| resolve_of(c, &report.ids)).collect();
        let created_at = cand
            .created_at
            .or(cand.t_valid.map(|v| v.from))
            .or(ex.session.date)
            .unwrap_or(now);
        let draft = NodeDraft {
            node_type: cand.node_type,
            name: cand.name,
            content: cand.content,
            children,
            edges: Vec::new(),
            created_at: Some(created_at),
            t_valid: cand.t_valid,
            provenance,
            aliases: cand.aliases,
            embedding: cand.embedding,
        };
        let out = tx.put_node(draft)?;
        report.ids.push(out.id);
        report.created.push(out.id);
        if !out.created {
            report.deduplicated.push(out.id);
        }
        match resolution {
            Resolution::Resolved(m) => pending.push((out.id, m)),
            Resolution::Ambiguous { options } => pending.extend(options.into_iter().map(|m| (out.id, m))),
            Resolution::New => {}
        }
    }

    for (new, m) in pending {
        if new == m.id || tx.state().pair_settled(new, m.id) {
            continue;
        }
        tx.write_edge(EdgeDraft::new(EdgeType::SAME_AS, new, m.id).meta(TIER_KEY, m.tier.as_str()))?;
    }

    for e in ex.edges {
        let draft = EdgeDraft {
            edge_type: e.edge_type,
            src: resolve_of(&e.src, &report.ids),
            dst: resolve_of(&e.dst, &report.ids),
            t_valid: e.t_valid,
            metadata: e.metadata,
        };
        let is_contradiction = draft.edge_type == EdgeType::CONTRADICTS;
        let id = tx.write_edge(draft)?;
        report.edges.push(id);
        if is_contradiction {
            report.contradictions_flagged.push(id);
        }
    }

    report.validity_closures = tx.closures().to_vec();
    report.proposals_staged = tx
        .dirty
        .proposals
        .iter()
        .copied()
        .filter(|p| tx.state().proposals.get(p).is_some_and(|p| p.status == ProposalStatus::Pending))
        .collect();
    Ok(report)
}
