//! End-to-end check with a deterministic stub extractor: ten synthetic
//! sessions are ingested and twenty set-membership questions are answered
//! through `retrieve`, compared against hand-derived answer sets.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use worldmem_core::fusion::{Lane, LaneFilter, RetrieveOptions};
use worldmem_core::reconciler::{CandidateEdge, CandidateNode, Extraction, NodeRef};
use worldmem_core::{
    EdgeType, Engine, EngineConfig, Error, Hash, ManualClock, NodeType, ReclusterMode, Result, Timestamp,
    ValidityInterval,
};

const WEEK: i64 = 7 * 86_400;
/// 2024-03-01 UTC.
const START: i64 = 1_709_251_200;

/// Session transcripts. `turn:` lines are the conversation, `fact` lines
/// are what an extractor would pull out, and `supersedes` / `contradicts`
/// lines relate facts by label, possibly across sessions.
pub const SESSIONS: [&str; 10] = [
    "turn: Met Sarah Chen from Acme at the robotics expo. She leads their vision team.\n\
     fact F1: Sarah Chen works at Acme | Sarah Chen, Acme",
    "turn: Marco Rossi is planning the team offsite in Berlin for June.\n\
     fact F2: The team offsite is in Berlin | Marco Rossi",
    "turn: Sarah Chen said she prefers morning meetings before standup.\n\
     fact F3: Sarah Chen prefers morning meetings | Sarah Chen",
    "turn: Marco Rossi moved the offsite to Lisbon because Berlin venues were booked.\n\
     fact F4: The team offsite is in Lisbon | Marco Rossi\n\
     supersedes F4 F2",
    "turn: Sarah Chen agreed to mentor Priya Natarajan on forecasting.\n\
     fact F5: Sarah Chen mentors Priya Natarajan | Sarah Chen, Priya Natarajan",
    "turn: Sarah Chen announced she joined Globex as head of perception.\n\
     fact F6: Sarah Chen works at Globex | Sarah Chen, Globex\n\
     supersedes F6 F1",
    "turn: Tomas Novak owns the vendor migration and wants a cutover plan by Friday.\n\
     fact F7: Tomas Novak owns the vendor migration | Tomas Novak",
    "turn: Legal reviewed the Globex contract and rated the renewal risk as low.\n\
     fact F8: The Globex renewal risk is low | Globex",
    "turn: Priya Natarajan approved the cloud budget cut after reviewing invoices.\n\
     fact F9: Priya Natarajan approved the cloud budget cut | Priya Natarajan",
    "turn: Tomas Novak escalated that the Globex contract renewal risk is now high.\n\
     fact F10: The Globex renewal risk is high | Globex\n\
     contradicts F10 F8",
];

#[derive(Debug, Clone)]
pub struct Question {
    pub text: &'static str,
    pub node_type: NodeType,
    pub lanes: Vec<Lane>,
    pub include_retired: bool,
    pub expected: &'static [&'static str],
}

fn lexical(text: &'static str, expected: &'static [&'static str]) -> Question {
    Question { text, node_type: NodeType::TURN, lanes: vec![Lane::Bm25], include_retired: false, expected }
}

fn entity(text: &'static str, expected: &'static [&'static str]) -> Question {
    Question { text, node_type: NodeType::FACT, lanes: vec![Lane::Entity], include_retired: false, expected }
}

pub fn questions() -> Vec<Question> {
    vec![
        lexical("robotics expo", &["T1"]),
        lexical("offsite", &["T2", "T4"]),
        lexical("Berlin", &["T2", "T4"]),
        lexical("Lisbon venues", &["T4"]),
        lexical("morning meetings", &["T3"]),
        lexical("mentor forecasting", &["T5"]),
        lexical("perception", &["T6"]),
        lexical("vendor migration cutover", &["T7"]),
        lexical("Globex contract", &["T6", "T8", "T10"]),
        lexical("renewal risk", &["T8", "T10"]),
        lexical("cloud invoices", &["T9"]),
        lexical("Tomas Novak", &["T7", "T10"]),
        lexical("Priya Natarajan", &["T5", "T9"]),
        lexical("Sarah Chen", &["T1", "T3", "T5", "T6"]),
        entity("What do we know about Sarah Chen?", &["F3", "F5", "F6"]),
        Question { include_retired: true, ..entity("What do we know about Sarah Chen?", &["F1", "F3", "F5", "F6"]) },
        entity("Where is Marco Rossi holding the offsite?", &["F4"]),
        entity("Status of Globex", &["F6", "F8", "F10"]),
        entity("Who is Priya Natarajan working with?", &["F5", "F9"]),
        entity("What does Tomas Novak own?", &["F7"]),
    ]
}

/// Parses the annotated transcript format above into an extraction.
/// `known` maps fact labels from earlier sessions to stored ids.
pub fn stub_extract(index: usize, text: &str, date: Timestamp, known: &BTreeMap<String, Hash>) -> Result<(Extraction, Vec<(String, usize)>)> {
    let mut ex = Extraction::session(format!("session-{}", index + 1), Some(date));
    let mut labels: Vec<(String, usize)> = Vec::new();
    let mut entities: BTreeMap<String, NodeRef> = BTreeMap::new();
    let valid = ValidityInterval::open(date);
    let bad = |line: &str| Error::InvalidExtraction(format!("unparseable line: {line}"));
    for line in text.lines().map(str::trim) {
        if let Some(turn) = line.strip_prefix("turn:") {
            let r = ex.node(CandidateNode::new(NodeType::TURN, format!("T{}", index + 1), turn.trim()).valid(valid));
            labels.push((format!("T{}", index + 1), local(r)));
        } else if let Some(rest) = line.strip_prefix("fact ") {
            let (label, rest) = rest.split_once(':').ok_or_else(|| bad(line))?;
            let (content, refs) = rest.split_once('|').ok_or_else(|| bad(line))?;
            let fact = ex.node(CandidateNode::new(NodeType::FACT, label.trim(), content.trim()).valid(valid));
            labels.push((label.trim().to_string(), local(fact)));
            for name in refs.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                let e = *entities
                    .entry(name.to_string())
                    .or_insert_with(|| ex.node(CandidateNode::new(NodeType::ENTITY, name, "").valid(valid)));
                ex.edge(CandidateEdge::new(EdgeType::REFERS_TO, fact, e).valid_from(date));
            }
        } else if let Some((kind, rest)) = line.split_once(' ') {
            let edge_type = match kind {
                "supersedes" => EdgeType::SUPERSEDES,
                "contradicts" => EdgeType::CONTRADICTS,
                _ => return Err(bad(line)),
            };
            let (a, b) = rest.split_once(' ').ok_or_else(|| bad(line))?;
            let resolve = |l: &str| -> Result<NodeRef> {
                if let Some((_, i)) = labels.iter().find(|(x, _)| x == l) {
                    return Ok(NodeRef::Local(*i));
                }
                known.get(l).map(|h| NodeRef::Existing(*h)).ok_or_else(|| bad(line))
            };
            ex.edge(CandidateEdge::new(edge_type, resolve(a.trim())?, resolve(b.trim())?).valid_from(date));
        } else if !line.is_empty() {
            return Err(bad(line));
        }
    }
    Ok((ex, labels))
}

fn local(r: NodeRef) -> usize {
    match r {
        NodeRef::Local(i) => i,
        NodeRef::Existing(_) => unreachable!("fresh candidates are local"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question: String,
    pub expected: BTreeSet<String>,
    pub got: BTreeSet<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub sessions: usize,
    pub answers: Vec<Answer>,
}

impl E2eReport {
    pub fn correct(&self) -> usize {
        self.answers.iter().filter(|a| a.pass).count()
    }
}

pub struct Ingested {
    pub engine: Engine,
    pub labels: BTreeMap<String, Hash>,
}

pub fn ingest_sessions() -> Result<Ingested> {
    let clock = Arc::new(ManualClock::new(Timestamp::from_secs(START)));
    let engine = Engine::in_memory(EngineConfig::new(16).clock(clock.clone()).recluster(ReclusterMode::Off));
    let mut labels = BTreeMap::new();
    for (i, text) in SESSIONS.iter().enumerate() {
        let date = Timestamp::from_secs(START + i as i64 * WEEK);
        clock.set(date);
        let (ex, local) = stub_extract(i, text, date, &labels)?;
        let report = engine.ingest(ex)?;
        for (label, idx) in local {
            labels.insert(label, report.ids[idx]);
        }
    }
    clock.set(Timestamp::from_secs(START + SESSIONS.len() as i64 * WEEK));
    Ok(Ingested { engine, labels })
}

pub fn run_e2e() -> Result<E2eReport> {
    let ing = ingest_sessions()?;
    let by_id: BTreeMap<Hash, &str> = ing.labels.iter().map(|(l, h)| (*h, l.as_str())).collect();
    let mut answers = Vec::new();
    for q in questions() {
        let opts = RetrieveOptions { k_per_lane: 50, top: 50, lanes: q.lanes.clone(), ..RetrieveOptions::default() };
        let filter = LaneFilter::new(ing.engine.now()).types([q.node_type.clone()]).include_retired(q.include_retired);
        let fused = ing.engine.retrieve(q.text, None, &opts, &filter)?;
        let got: BTreeSet<String> =
            fused.ids().iter().map(|h| by_id.get(h).map_or_else(|| h.to_string(), |l| l.to_string())).collect();
        let expected: BTreeSet<String> = q.expected.iter().map(|s| s.to_string()).collect();
        answers.push(Answer { question: q.text.to_string(), pass: got == expected, expected, got });
    }
    Ok(E2eReport { sessions: SESSIONS.len(), answers })
}
