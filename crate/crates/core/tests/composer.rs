mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldmem_core::composer::{compose_vectors, run_compose_study, StudyParams};
use worldmem_core::{ComposeMode, Engine, EngineConfig, Hash, ManualClock, NodeDraft, NodeType, ReclusterMode};

const DIM: usize = 12;

fn rand_unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let v: Vec<f64> = (0..DIM).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    common::unit(&v)
}

struct Tree {
    /// node -> children, bottom-up insertion order
    kids: BTreeMap<Hash, Vec<Hash>>,
    order: Vec<Hash>,
    leaves: Vec<Hash>,
}

fn build(e: &Engine, rng: &mut ChaCha8Rng, level: usize, max_depth: usize, counter: &mut u32, t: &mut Tree) -> Hash {
    *counter += 1;
    let fanout = if level < max_depth && (level == 0 || rng.random_bool(0.6)) { rng.random_range(1..=4) } else { 0 };
    let kids: Vec<Hash> = (0..fanout).map(|_| build(e, rng, level + 1, max_depth, counter, t)).collect();
    let v = rand_unit(rng);
    let id = e
        .put_node(NodeDraft::new(NodeType::TOPIC, format!("n{counter}"), "").children(kids.clone()).embedding(v))
        .unwrap()
        .id;
    if kids.is_empty() {
        t.leaves.push(id);
    }
    t.kids.insert(id, kids);
    t.order.push(id);
    id
}

/// Independent f64 recomposition straight from content anchors.
fn oracle(e: &Engine, t: &Tree, mode: ComposeMode) -> BTreeMap<Hash, Vec<f64>> {
    let mut eff: BTreeMap<Hash, Vec<f64>> = BTreeMap::new();
    for h in &t.order {
        let content: Vec<f64> = e.embedding(h).unwrap().content.iter().map(|x| f64::from(*x)).collect();
        let kids = &t.kids[h];
        if kids.is_empty() {
            eff.insert(*h, content);
            continue;
        }
        let children: Vec<&Vec<f64>> = kids.iter().map(|k| &eff[k]).collect();
        let mut acc = content.clone();
        match mode {
            ComposeMode::V1Mean => {
                for c in &children {
                    for i in 0..DIM {
                        acc[i] += c[i];
                    }
                }
            }
            ComposeMode::V2Attention => {
                let scale = 1.0 / (DIM as f64).sqrt();
                let logits: Vec<f64> =
                    children.iter().map(|c| (0..DIM).map(|i| content[i] * c[i]).sum::<f64>() * scale).collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for (c, l) in children.iter().zip(&logits) {
                    let w = (l - m).exp() / z;
                    for i in 0..DIM {
                        acc[i] += w * c[i];
                    }
                }
            }
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        eff.insert(*h, acc.into_iter().map(|x| x / n).collect());
    }
    eff
}

fn engine(mode: ComposeMode) -> Engine {
    let clock = Arc::new(ManualClock::stepping(common::secs(0), 1));
    Engine::in_memory(EngineConfig::new(DIM).clock(clock).recluster(ReclusterMode::Off).compose_mode(Some(mode)))
}

fn assert_matches_oracle(e: &Engine, t: &Tree, mode: ComposeMode, tag: &str) {
    let want = oracle(e, t, mode);
    for (h, w) in &want {
        let got = e.embedding(h).unwrap().effective;
        for i in 0..DIM {
            assert!((f64::from(got[i]) - w[i]).abs() < 1e-6, "{tag}: component {i} differs");
        }
    }
}

#[test]
fn incremental_propagation_matches_full_recompute_on_100_trees() {
    let start = std::time::Instant::now();
    for seed in 0..100u64 {
        let mode = if seed % 2 == 0 { ComposeMode::V2Attention } else { ComposeMode::V1Mean };
        let e = engine(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tree { kids: BTreeMap::new(), order: Vec::new(), leaves: Vec::new() };
        let depth = rng.random_range(1..=5);
        build(&e, &mut rng, 0, depth, &mut 0, &mut t);
        assert_matches_oracle(&e, &t, mode, &format!("seed {seed} initial"));
        for round in 0..3 {
            let leaf = t.leaves[rng.random_range(0..t.leaves.len())];
            e.upsert_content(leaf, rand_unit(&mut rng)).unwrap();
            let touched = e.propagate(leaf, mode).unwrap();
            // Only the path to the root recomposes.
            let mut path = Vec::new();
            let mut p = e.get_node(&leaf, false).unwrap().parent_world;
            while let Some(x) = p {
                path.push(x);
                p = e.get_node(&x, false).unwrap().parent_world;
            }
            assert_eq!(touched, path);
            assert_matches_oracle(&e, &t, mode, &format!("seed {seed} round {round}"));
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn content_anchor_never_moves_when_composing() {
    let e = engine(ComposeMode::V2Attention);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = e.put_node(NodeDraft::new(NodeType::FACT, "a", "").embedding(rand_unit(&mut rng))).unwrap().id;
    let anchor = rand_unit(&mut rng);
    let w = e.put_node(NodeDraft::new(NodeType::TOPIC, "w", "").children([a]).embedding(anchor.clone())).unwrap().id;
    for _ in 0..5 {
        e.compose(w, ComposeMode::V2Attention).unwrap();
    }
    let rec = e.embedding(&w).unwrap();
    assert_eq!(rec.content, anchor);
    assert!(rec.overlaid);
    let expect = compose_vectors(&anchor, &[&e.embedding(&a).unwrap().effective], ComposeMode::V2Attention).unwrap();
    assert_eq!(rec.effective, expect);
}

#[test]
fn composed_vectors_are_indexed() {
    let e = engine(ComposeMode::V1Mean);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = e.put_node(NodeDraft::new(NodeType::FACT, "a", "").embedding(rand_unit(&mut rng))).unwrap().id;
    let w = e.put_node(NodeDraft::new(NodeType::TOPIC, "w", "").children([a]).embedding(rand_unit(&mut rng))).unwrap().id;
    let eff = e.embedding(&w).unwrap().effective;
    let hits = e.knn(&eff, 1).unwrap();
    assert_eq!(hits[0].0, w);
}

#[test]
fn attention_pooling_beats_mean_pooling_on_the_study() {
    let r = run_compose_study(1, StudyParams::default());
    assert!(r.v2_top1 - r.v1_top1 >= 0.05, "{r:?}");
    assert!((r.v2_top1 - 1.00).abs() <= 0.10, "{r:?}");
    assert!((r.v1_top1 - 0.88).abs() <= 0.10, "{r:?}");
}
