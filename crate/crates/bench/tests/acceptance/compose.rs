use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldmem_core::composer::{run_compose_study, StudyParams};
use worldmem_core::{ComposeMode, Engine, EngineConfig, Hash, ManualClock, NodeDraft, NodeType, ReclusterMode, Timestamp};

use crate::{ensure, Outcome};

const DIM: usize = 12;

pub fn study() -> Outcome {
    let r = run_compose_study(1, StudyParams::default());
    let detail = format!("v2 top-1 {:.0}%, v1 top-1 {:.0}%", r.v2_top1 * 100.0, r.v1_top1 * 100.0);
    ensure!(r.v2_top1 - r.v1_top1 >= 0.05, "{detail}: gap under 5 points");
    ensure!((r.v2_top1 - 1.00).abs() <= 0.10, "{detail}: v2 more than 10 points from 100%");
    ensure!((r.v1_top1 - 0.88).abs() <= 0.10, "{detail}: v1 more than 10 points from 88%");
    Ok(detail)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let v: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

struct Tree {
    kids: BTreeMap<Hash, Vec<Hash>>,
    /// Children before parents.
    order: Vec<Hash>,
    leaves: Vec<Hash>,
}

fn grow(e: &Engine, rng: &mut ChaCha8Rng, level: usize, max_depth: usize, n: &mut u32, t: &mut Tree) -> Hash {
    *n += 1;
    let fanout = if level < max_depth && (level == 0 || rng.random_bool(0.6)) { rng.random_range(1..=4) } else { 0 };
    let kids: Vec<Hash> = (0..fanout).map(|_| grow(e, rng, level + 1, max_depth, n, t)).collect();
    let draft = NodeDraft::new(NodeType::TOPIC, format!("c{n}"), "").children(kids.clone()).embedding(unit(rng));
    let id = e.put_node(draft).unwrap().id;
    if kids.is_empty() {
        t.leaves.push(id);
    }
    t.kids.insert(id, kids);
    t.order.push(id);
    id
}

/// Full bottom-up recomposition in f64 from the content anchors.
fn recompute(e: &Engine, t: &Tree, mode: ComposeMode) -> BTreeMap<Hash, Vec<f64>> {
    let mut eff: BTreeMap<Hash, Vec<f64>> = BTreeMap::new();
    for h in &t.order {
        let content: Vec<f64> = e.embedding(h).unwrap().content.iter().map(|x| f64::from(*x)).collect();
        let kids: Vec<&Vec<f64>> = t.kids[h].iter().map(|k| &eff[k]).collect();
        if kids.is_empty() {
            eff.insert(*h, content);
            continue;
        }
        let weights: Vec<f64> = match mode {
            ComposeMode::V1Mean => vec![1.0; kids.len()],
            ComposeMode::V2Attention => {
                let logits: Vec<f64> = kids
                    .iter()
                    .map(|c| c.iter().zip(&content).map(|(a, b)| a * b).sum::<f64>() / (DIM as f64).sqrt())
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                logits.iter().map(|l| (l - m).exp() / z).collect()
            }
        };
        let mut acc = content.clone();
        for (c, w) in kids.iter().zip(&weights) {
            for i in 0..DIM {
                acc[i] += w * c[i];
            }
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        eff.insert(*h, acc.into_iter().map(|x| x / n).collect());
    }
    eff
}

pub fn incremental() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mode = if seed % 2 == 0 { ComposeMode::V2Attention } else { ComposeMode::V1Mean };
        let clock = Arc::new(ManualClock::stepping(Timestamp::from_secs(1_700_000_000), 1));
        let e = Engine::in_memory(EngineConfig::new(DIM).clock(clock).recluster(ReclusterMode::Off).compose_mode(Some(mode)));
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut t = Tree { kids: BTreeMap::new(), order: Vec::new(), leaves: Vec::new() };
        let depth = rng.random_range(1..=5);
        grow(&e, &mut rng, 0, depth, &mut 0, &mut t);
        let leaf = t.leaves[rng.random_range(0..t.leaves.len())];
        e.upsert_content(leaf, unit(&mut rng)).map_err(|err| err.to_string())?;
        e.propagate(leaf, mode).map_err(|err| err.to_string())?;
        for (h, want) in recompute(&e, &t, mode) {
            let got = e.embedding(&h).unwrap().effective;
            for i in 0..DIM {
                let d = (f64::from(got[i]) - want[i]).abs();
                worst = worst.max(d);
                ensure!(d <= 1e-6, "tree {seed}: component {i} differs by {d:e}");
            }
        }
    }
    Ok(format!("100 trees, max component deviation {worst:e}"))
}
