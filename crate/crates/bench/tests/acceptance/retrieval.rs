use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldmem_bench::load::{bench_config, random_unit};
use worldmem_bench::stats::median;
use worldmem_core::fusion::{rrf_fuse, Lane, RankedList};
use worldmem_core::{Engine, Hash, NodeDraft, NodeType};

use crate::{ensure, Outcome};

const DIM: usize = 16;

fn exact_top10(records: &[(Hash, Vec<f32>)], q: &[f32]) -> BTreeSet<Hash> {
    let mut scored: Vec<(f64, Hash)> = records
        .iter()
        .map(|(h, v)| {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            let nv: f64 = v.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
            let nq: f64 = q.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
            (dot / (nv * nq), *h)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(10).map(|(_, h)| h).collect()
}

pub fn ann() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let vectors: Vec<Vec<f32>> = (0..10_000).map(|_| random_unit(&mut rng, DIM)).collect();
    let engine = Engine::in_memory(bench_config(DIM));
    let drafts = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| NodeDraft::new(NodeType::FACT, format!("rec{i}"), "").embedding(v.clone()))
        .collect();
    let ids = engine.bulk_load(drafts, |_| Vec::new()).map_err(|e| e.to_string())?;
    engine.rebuild_index(true).map_err(|e| e.to_string())?;
    let records: Vec<(Hash, Vec<f32>)> = ids.into_iter().zip(vectors).collect();
    let probes = 200;
    let (mut hits, mut ann_t, mut brute_t) = (0usize, Vec::<Duration>::new(), Vec::<Duration>::new());
    for _ in 0..probes {
        let q = random_unit(&mut rng, DIM);
        let s = Instant::now();
        let got = std::hint::black_box(engine.knn(&q, 10).map_err(|e| e.to_string())?);
        ann_t.push(s.elapsed());
        let s = Instant::now();
        std::hint::black_box(engine.brute_force_knn(&q, 10).map_err(|e| e.to_string())?);
        brute_t.push(s.elapsed());
        let truth = exact_top10(&records, &q);
        hits += got.iter().filter(|(h, _)| truth.contains(h)).count();
    }
    let recall = hits as f64 / (10 * probes) as f64;
    let (a, b) = (median(&ann_t).as_secs_f64() * 1e6, median(&brute_t).as_secs_f64() * 1e6);
    let speedup = b / a;
    let detail = format!("recall@10 {recall:.4}, ann {a:.1}us vs brute {b:.1}us median, {speedup:.1}x");
    ensure!(recall >= 0.95, "{detail}: recall below 0.95");
    ensure!(speedup >= 3.0, "{detail}: speedup below 3x");
    Ok(detail)
}

fn h(i: u32) -> Hash {
    Hash::digest(&i.to_le_bytes())
}

const LANES: [Lane; 3] = [Lane::Bm25, Lane::Vector, Lane::Entity];

fn random_lists(rng: &mut ChaCha8Rng) -> Vec<RankedList> {
    let universe: Vec<u32> = (0..rng.random_range(1..100)).collect();
    (0..rng.random_range(1..=3))
        .map(|l| {
            let mut pool = universe.clone();
            pool.shuffle(rng);
            pool.truncate(rng.random_range(0..=pool.len()));
            RankedList::from_ordered(LANES[l], pool.into_iter().map(|i| (h(i), 0.0)).collect())
        })
        .collect()
}

/// Sum of 1/(60 + rank) evaluated per id from list positions.
fn direct(lists: &[RankedList]) -> HashMap<Hash, f64> {
    let mut out: HashMap<Hash, f64> = HashMap::new();
    for list in lists.iter().rev() {
        for (pos, e) in list.entries.iter().enumerate() {
            *out.entry(e.id).or_default() += 1.0 / (60.0 + (pos + 1) as f64);
        }
    }
    out
}

fn rank(list: &RankedList, id: &Hash) -> Option<usize> {
    list.entries.iter().position(|e| e.id == *id).map(|p| p + 1)
}

pub fn rrf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut dominance_pairs = 0usize;
    for cfg in 0..1000 {
        let lists = random_lists(&mut rng);
        let fused = rrf_fuse(&lists, 60, usize::MAX);
        let want = direct(&lists);
        ensure!(fused.entries.len() == want.len(), "config {cfg}: fused {} ids, expected {}", fused.entries.len(), want.len());
        for e in &fused.entries {
            let d = (e.score - want[&e.id]).abs();
            worst = worst.max(d);
            ensure!(d <= 1e-12, "config {cfg}: score off by {d:e}");
        }
        // An id ranked at least as well in every lane, and strictly better
        // or present-only in one, never fuses below the other.
        let pos: HashMap<Hash, usize> = fused.entries.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        let ids: Vec<Hash> = fused.ids();
        for x in ids.iter().take(20) {
            for y in ids.iter().take(20) {
                let mut strict = false;
                let dominated = lists.iter().all(|l| match (rank(l, x), rank(l, y)) {
                    (Some(a), Some(b)) => {
                        strict |= a < b;
                        a <= b
                    }
                    (Some(_), None) => {
                        strict = true;
                        true
                    }
                    (None, None) => true,
                    (None, Some(_)) => false,
                });
                if x != y && dominated && strict {
                    dominance_pairs += 1;
                    ensure!(pos[x] < pos[y], "config {cfg}: dominated id fused above its dominator");
                }
            }
        }
    }
    Ok(format!("1000 configurations, max deviation {worst:e}, {dominance_pairs} dominance pairs"))
}
