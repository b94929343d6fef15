use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldmem_core::query::{Direction, Op, Query};
use worldmem_core::store::NodeEdit;
use worldmem_core::{
    EdgeDraft, EdgeType, Engine, EngineConfig, Error, Hash, ManualClock, NodeDraft, NodeType, ProposalStatus,
    ReclusterMode, Timestamp, ValidityInterval,
};

use crate::{ensure, Outcome};

const T0: i64 = 1_700_000_000;

fn at(s: i64) -> Timestamp {
    Timestamp::from_secs(T0 + s)
}

fn engine() -> (Engine, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(at(0)));
    (Engine::in_memory(EngineConfig::new(4).clock(clock.clone()).recluster(ReclusterMode::Off)), clock)
}

/// Random tree with depth at most `max_depth` and fanout at most
/// `max_fanout`. Returns the parent of every node and each leaf's depth.
fn tree(e: &Engine, rng: &mut ChaCha8Rng, max_depth: usize, max_fanout: usize) -> (BTreeMap<Hash, Hash>, Vec<(Hash, usize)>) {
    fn grow(
        e: &Engine,
        rng: &mut ChaCha8Rng,
        level: usize,
        limits: (usize, usize),
        n: &mut usize,
        parent: &mut BTreeMap<Hash, Hash>,
        leaves: &mut Vec<(Hash, usize)>,
    ) -> Hash {
        *n += 1;
        let label = format!("w{n}");
        let fanout = if level < limits.0 && (level == 0 || rng.random_bool(0.6)) { rng.random_range(1..=limits.1) } else { 0 };
        let kids: Vec<Hash> = (0..fanout).map(|_| grow(e, rng, level + 1, limits, n, parent, leaves)).collect();
        let id = e.put_node(NodeDraft::new(NodeType::TOPIC, label, "body").children(kids.clone())).unwrap().id;
        for k in kids {
            parent.insert(k, id);
        }
        if fanout == 0 {
            leaves.push((id, level));
        }
        id
    }
    let (mut parent, mut leaves) = (BTreeMap::new(), Vec::new());
    grow(e, rng, 0, (max_depth, max_fanout), &mut 0, &mut parent, &mut leaves);
    (parent, leaves)
}

fn ids(e: &Engine) -> BTreeSet<Hash> {
    e.read(|st| st.node_ids().copied().collect())
}

pub fn edit_propagation() -> Outcome {
    let mut deepest = 0;
    for seed in 0..200u64 {
        let (e, _) = engine();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (max_depth, max_fanout) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let (parent, leaves) = tree(&e, &mut rng, max_depth, max_fanout);
        let (leaf, depth) = leaves[rng.random_range(0..leaves.len())];
        // Expected rewrite path from the recorded parent links.
        let mut path = vec![leaf];
        while let Some(p) = parent.get(path.last().unwrap()) {
            path.push(*p);
        }
        ensure!(path.len() == depth + 1, "seed {seed}: tree bookkeeping");
        let before = ids(&e);
        let map = e
            .rewrite_with_edit(leaf, NodeEdit { content: Some(format!("edited {seed}")), ..Default::default() })
            .map_err(|err| format!("seed {seed}: {err}"))?;
        let after = ids(&e);
        let fresh: BTreeSet<Hash> = after.difference(&before).copied().collect();
        ensure!(fresh.len() == depth + 1, "seed {seed}: {} new hashes for depth {depth}", fresh.len());
        ensure!(before.is_subset(&after), "seed {seed}: an old version vanished");
        let old_path: Vec<Hash> = map.iter().map(|(o, _)| *o).collect();
        ensure!(old_path == path, "seed {seed}: rewritten nodes are not the leaf's ancestors");
        deepest = deepest.max(depth);
    }
    Ok(format!("200 trees, deepest edited leaf at depth {deepest}"))
}

fn fact(e: &Engine, name: &str, from: i64) -> Hash {
    e.put_node(NodeDraft::new(NodeType::FACT, name, name).created_at(at(from)).valid(ValidityInterval::open(at(from))))
        .unwrap()
        .id
}

fn valid_to(e: &Engine, h: Hash) -> Option<Timestamp> {
    e.get_node(&h, false).unwrap().t_valid.to
}

fn supersession_orders() -> Outcome {
    // Every ordering of supersession times against a target valid from 10:
    // accepted edges close at the earliest time seen so far, edges dated
    // before the target's start are refused.
    let times = [5i64, 12, 20, 30];
    let mut orders = 0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let (e, _) = engine();
                let target = fact(&e, "target", 10);
                let mut expected: Option<i64> = None;
                for (i, t) in [times[a], times[b], times[c]].into_iter().enumerate() {
                    let src = fact(&e, &format!("v{i}-{t}"), t);
                    let r = e.write_edge(EdgeDraft::new(EdgeType::SUPERSEDES, src, target).valid_from(at(t)));
                    if t < 10 {
                        ensure!(matches!(r, Err(Error::HandlerRefused { .. })), "edge at {t} before target start accepted");
                    } else {
                        ensure!(r.is_ok(), "edge at {t} refused: {:?}", r.err());
                        expected = Some(expected.map_or(t, |x| x.min(t)));
                    }
                    ensure!(valid_to(&e, target) == expected.map(at), "order {:?}: bound moved wrongly", (a, b, c));
                }
                orders += 1;
            }
        }
    }
    ensure!(orders == 64, "ran {orders} orders");
    Ok(String::new())
}

fn contradictions_keep_both_sides() -> Outcome {
    let (e, clock) = engine();
    let x = fact(&e, "revenue rose", 10);
    let y = fact(&e, "revenue fell", 10);
    let w = e.put_node(NodeDraft::new(NodeType::TOPIC, "q", "").children([x, y]).created_at(at(0))).unwrap().id;
    e.write_edge(EdgeDraft::new(EdgeType::CONTRADICTS, x, y).valid_from(at(10))).unwrap();
    clock.set(at(100));
    let g = e.execute(&Query::seeds([w]).op(Op::traverse(EdgeType::CONTAINS, Direction::Outgoing, 1))).unwrap();
    ensure!(g.contains(&x) && g.contains(&y), "a contradicted side is missing from the default view");
    ensure!(g.conflict_flags.contains(&x) && g.conflict_flags.contains(&y), "conflict markers missing");
    ensure!(valid_to(&e, x).is_none() && valid_to(&e, y).is_none(), "contradiction closed a side");
    Ok(String::new())
}

fn same_as_needs_acceptance() -> Outcome {
    let (e, _) = engine();
    let a = e.put_node(NodeDraft::new(NodeType::ENTITY, "Sarah Chen", "")).unwrap().id;
    let b = e.put_node(NodeDraft::new(NodeType::ENTITY, "Sara Chen", "")).unwrap().id;
    let c = e.put_node(NodeDraft::new(NodeType::ENTITY, "S. Chen", "")).unwrap().id;
    let p1 = e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, a, b)).unwrap().proposal.ok_or("no proposal staged")?;
    let p2 = e.write_edge(EdgeDraft::new(EdgeType::SAME_AS, b, c)).unwrap().proposal.ok_or("no proposal staged")?;
    for h in [a, b, c] {
        ensure!(e.equivalence_class(h).unwrap().len() == 1, "identity merged before acceptance");
    }
    e.reject_merge(p2).unwrap();
    ensure!(e.equivalence_class(c).unwrap().len() == 1, "rejected claim merged");
    e.accept_merge(p1).unwrap();
    ensure!(e.equivalence_class(a).unwrap() == BTreeSet::from([a, b]), "accepted claim did not merge");
    ensure!(e.proposal(&p2).unwrap().status == ProposalStatus::Rejected, "rejection not recorded");
    ensure!(e.contains_node(&a) && e.contains_node(&b), "merge destroyed a node");
    Ok(String::new())
}

pub fn handler_semantics() -> Outcome {
    supersession_orders()?;
    contradictions_keep_both_sides()?;
    same_as_needs_acceptance()?;
    Ok("64 supersession orders, contradiction view, staged identity".into())
}
