//! Summary-first versus full-detail traversal over a consolidated corpus.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use worldmem_core::consolidator::ConsolidatorConfig;
use worldmem_core::query::{Direction, Op, Query, Subgraph};
use worldmem_core::store::{ROLE, ROLE_SUMMARY};
use worldmem_core::{EdgeDraft, EdgeType, Engine, Hash, NodeDraft, NodeType, Result};

use crate::load::{bench_config, random_unit, vocabulary, DIM};
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub facts: usize,
    pub topics: usize,
    pub runs: usize,
    pub summary_first_ms: f64,
    pub full_detail_ms: f64,
    pub ratio: f64,
    pub summary_nodes_returned: usize,
    pub full_nodes_returned: usize,
    /// Both results reach exactly the same topic worlds.
    pub same_topics: bool,
    /// Every detail is reachable by descending from its summary.
    pub details_reachable: bool,
}

pub struct SummaryFixture {
    pub engine: Engine,
    pub root: Hash,
    pub topics: Vec<Hash>,
    pub facts: Vec<Vec<Hash>>,
}

/// `n_topics` topic worlds of equal size under one root, consolidated.
pub fn summary_fixture(n_facts: usize, n_topics: usize, seed: u64) -> Result<SummaryFixture> {
    let engine = worldmem_core::Engine::in_memory(bench_config(DIM));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(seed, 500);
    let per = n_facts / n_topics.max(1);
    let mut topics = Vec::with_capacity(n_topics);
    let mut facts = Vec::with_capacity(n_topics);
    for t in 0..n_topics {
        let ids = (0..per)
            .map(|i| {
                let words: Vec<&str> = (0..40).map(|_| vocab.choose(&mut rng).expect("vocab").as_str()).collect();
                let d = NodeDraft::new(NodeType::FACT, format!("topic {t} fact {i}"), words.join(" "))
                    .embedding(random_unit(&mut rng, DIM));
                engine.put_node(d).map(|o| o.id)
            })
            .collect::<Result<Vec<_>>>()?;
        let topic = NodeDraft::new(NodeType::TOPIC, format!("topic {t}"), "").children(ids.clone());
        topics.push(engine.put_node(topic.embedding(random_unit(&mut rng, DIM)))?.id);
        facts.push(ids);
    }
    // Topics hang off the root by explicit edges, so the root itself is not
    // a summary candidate and both traversals reach every topic.
    let root = engine.put_node(NodeDraft::new(NodeType::TOPIC, "corpus", ""))?.id;
    for t in &topics {
        engine.write_edge(EdgeDraft::new(EdgeType::CONTAINS, root, *t))?;
    }
    engine.consolidate(&ConsolidatorConfig { min_age_secs: 0, ..ConsolidatorConfig::default() })?;
    Ok(SummaryFixture { engine, root, topics, facts })
}

fn descend(root: Hash, prefer: bool) -> Query {
    let q = Query::seeds([root]).op(Op::Traverse {
        edge_type: Some(EdgeType::CONTAINS),
        direction: Direction::Outgoing,
        depth: None,
    });
    if prefer {
        q.op(Op::PreferSummaries)
    } else {
        q
    }
}

fn timed(engine: &Engine, q: &Query, runs: usize) -> Result<(Duration, Subgraph)> {
    let mut samples = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs {
        let start = Instant::now();
        let g = engine.execute(q)?;
        samples.push(start.elapsed());
        last = Some(g);
    }
    Ok((median(&samples), last.expect("at least one run")))
}

pub fn summary_speed_bench(n_facts: usize, n_topics: usize, runs: usize) -> Result<SummaryReport> {
    let f = summary_fixture(n_facts, n_topics, 3)?;
    let (brief_t, brief) = timed(&f.engine, &descend(f.root, true), runs)?;
    let (full_t, full) = timed(&f.engine, &descend(f.root, false), runs)?;
    let topic_set: BTreeSet<Hash> = f.topics.iter().copied().collect();
    let same_topics = brief.ids().intersection(&topic_set).count() == topic_set.len()
        && full.ids().intersection(&topic_set).count() == topic_set.len();
    let mut details_reachable = true;
    for (topic, kids) in f.topics.iter().zip(&f.facts) {
        let summary = f.engine.read(|st| {
            st.out_edges(topic).find(|e| e.meta(ROLE) == Some(ROLE_SUMMARY)).map(|e| e.dst)
        });
        let Some(summary) = summary.filter(|s| brief.contains(s)) else {
            details_reachable = false;
            break;
        };
        let down = f.engine.execute(&Query::seeds([summary]).op(Op::traverse(EdgeType::REFERS_TO, Direction::Outgoing, 1)))?;
        details_reachable &= kids.iter().all(|k| down.contains(k) && !brief.contains(k));
    }
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    Ok(SummaryReport {
        facts: f.facts.iter().map(Vec::len).sum(),
        topics: f.topics.len(),
        runs,
        summary_first_ms: ms(brief_t),
        full_detail_ms: ms(full_t),
        ratio: full_t.as_secs_f64() / brief_t.as_secs_f64().max(1e-12),
        summary_nodes_returned: brief.nodes.len(),
        full_nodes_returned: full.nodes.len(),
        same_topics,
        details_reachable,
    })
}
