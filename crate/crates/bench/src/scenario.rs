//! A three-quarter company timeline with superseded metrics, contradicting
//! decisions, and causal links, queried by six pipelines whose expected
//! answers are written out by hand.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use worldmem_core::query::{Axis, Direction, Op, Query};
use worldmem_core::{
    EdgeDraft, EdgeType, Engine, EngineConfig, Hash, ManualClock, NodeDraft, NodeType, ReclusterMode, Result,
    Timestamp, ValidityInterval,
};

const DAY: i64 = 86_400;
/// 2023-01-01, 2023-04-01, 2023-07-01, 2023-10-01 UTC.
const Q1: i64 = 1_672_531_200;
const Q2: i64 = 1_680_307_200;
const Q3: i64 = 1_688_169_600;
const NOW: i64 = 1_696_118_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub name: String,
    pub expected: BTreeSet<String>,
    pub got: BTreeSet<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub queries: Vec<QueryOutcome>,
}

impl ScenarioReport {
    pub fn all_pass(&self) -> bool {
        self.queries.iter().all(|q| q.pass)
    }
}

fn ts(s: i64) -> Timestamp {
    Timestamp::from_secs(s)
}

struct Builder {
    engine: Engine,
    labels: BTreeMap<Hash, String>,
    ids: BTreeMap<&'static str, Hash>,
}

impl Builder {
    fn node(&mut self, label: &'static str, t: &str, content: &str, from: i64, children: &[&str]) -> Result<Hash> {
        let kids: Vec<Hash> = children.iter().map(|c| self.ids[c]).collect();
        let d = NodeDraft::new(NodeType::new(t.to_string()), label, content)
            .created_at(ts(from))
            .valid(ValidityInterval::open(ts(from)))
            .children(kids);
        let id = self.engine.put_node(d)?.id;
        self.labels.insert(id, label.to_string());
        self.ids.insert(label, id);
        Ok(id)
    }

    fn edge(&self, t: EdgeType, src: &str, dst: &str, from: i64) -> Result<()> {
        self.engine.write_edge(EdgeDraft::new(t, self.ids[src], self.ids[dst]).valid_from(ts(from)))?;
        Ok(())
    }
}

fn build() -> Result<Builder> {
    let clock = Arc::new(ManualClock::new(ts(NOW)));
    let engine = Engine::in_memory(EngineConfig::new(8).clock(clock).recluster(ReclusterMode::Off));
    let mut b = Builder { engine, labels: BTreeMap::new(), ids: BTreeMap::new() };
    b.node("m1", "Metric", "Q1 deliveries 422,875", Q1, &[])?;
    b.node("m2", "Metric", "Q2 deliveries 466,140", Q2, &[])?;
    b.node("m3", "Metric", "Q3 deliveries 435,059", Q3, &[])?;
    b.node("d1", "Decision", "Cut Model Y prices in the US", Q1 + 10 * DAY, &[])?;
    b.node("d2", "Decision", "Hold prices and protect margin", Q2 + 5 * DAY, &[])?;
    b.node("d3", "Decision", "Raise Model Y prices", Q3 + 5 * DAY, &[])?;
    b.node("d4", "Decision", "Retool the Shanghai line", Q3 + 20 * DAY, &[])?;
    b.node("c1", "Claim", "Analyst: demand is collapsing", Q1 + 30 * DAY, &[])?;
    b.node("c2", "Claim", "CEO: demand is robust", Q3 + 30 * DAY, &[])?;
    b.node("era_q1", "Topic", "first quarter", Q1, &["m1", "d1", "c1"])?;
    b.node("era_q2", "Topic", "second quarter", Q2, &["m2", "d2"])?;
    b.node("era_q3", "Topic", "third quarter", Q3, &["m3", "d3", "d4", "c2"])?;
    b.node("company", "Topic", "Tesla timeline", Q1, &["era_q1", "era_q2", "era_q3"])?;
    b.edge(EdgeType::SUPERSEDES, "m2", "m1", Q2)?;
    b.edge(EdgeType::SUPERSEDES, "m3", "m2", Q3)?;
    b.edge(EdgeType::CONTRADICTS, "d2", "d1", Q2 + 5 * DAY)?;
    b.edge(EdgeType::CONTRADICTS, "d3", "d1", Q3 + 5 * DAY)?;
    b.edge(EdgeType::CONTRADICTS, "c2", "c1", Q3 + 30 * DAY)?;
    b.edge(EdgeType::CAUSES, "d1", "m2", Q2)?;
    b.edge(EdgeType::CAUSES, "d4", "m3", Q3 + 20 * DAY)?;
    Ok(b)
}

fn everything_under(root: Hash) -> Query {
    Query::seeds([root]).op(Op::Traverse { edge_type: Some(EdgeType::CONTAINS), direction: Direction::Outgoing, depth: None })
}

fn types(names: &[&str]) -> Op {
    Op::filter_type(names.iter().map(|n| NodeType::new(n.to_string())))
}

pub fn scenario_multihop() -> Result<ScenarioReport> {
    let b = build()?;
    let id = |l: &str| b.ids[l];
    let root = id("company");
    let cases: Vec<(&str, Query, &[&str])> = vec![
        ("current metric value", everything_under(root).op(types(&["Metric"])), &["m3"]),
        (
            "metric history",
            everything_under(root).op(types(&["Metric"])).op(Op::IncludeSuperseded),
            &["m1", "m2", "m3"],
        ),
        (
            "state as of mid first quarter",
            everything_under(root).op(Op::AsOf { axis: Axis::Valid, at: ts(Q1 + 45 * DAY) }).op(types(&["Metric", "Decision"])),
            &["m1", "d1"],
        ),
        (
            "decisions that reversed the first-quarter price cut",
            everything_under(root).op(types(&["Decision"])).op(Op::WhereConnected {
                edge_type: EdgeType::CONTRADICTS,
                direction: Direction::Outgoing,
                target: id("d1"),
            }),
            &["d2", "d3"],
        ),
        (
            "decisions behind the current metric",
            everything_under(root)
                .op(types(&["Metric"]))
                .op(Op::traverse(EdgeType::CAUSES, Direction::Incoming, 1))
                .op(types(&["Decision"])),
            &["d4"],
        ),
        (
            "second-quarter interior during the quarter",
            Query::seeds([id("era_q2")])
                .op(Op::InWorld(id("era_q2")))
                .op(Op::AsOf { axis: Axis::Valid, at: ts(Q2 + 30 * DAY) })
                .op(Op::Traverse { edge_type: None, direction: Direction::Outgoing, depth: None }),
            &["era_q2", "m2", "d2"],
        ),
    ];
    let mut queries = Vec::new();
    for (name, q, want) in cases {
        let g = b.engine.execute(&q)?;
        let got: BTreeSet<String> = g.nodes.iter().map(|n| b.labels.get(&n.id).cloned().unwrap_or_else(|| n.id.to_string())).collect();
        let expected: BTreeSet<String> = want.iter().map(|s| s.to_string()).collect();
        queries.push(QueryOutcome { name: name.into(), pass: got == expected, expected, got });
    }
    Ok(ScenarioReport { queries })
}
