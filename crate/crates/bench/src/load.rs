//! Bulk load, read-latency probes, and the ANN-versus-scan comparison.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use worldmem_core::fusion::LaneFilter;
use worldmem_core::query::{Direction, Op, Query};
use worldmem_core::{
    EdgeDraft, EdgeType, Engine, EngineConfig, Hash, ManualClock, NodeDraft, NodeType, ReclusterMode, Result,
    Timestamp, ValidityInterval,
};

use crate::stats::{median, quantiles, Quantiles};

pub const DIM: usize = 16;
/// Table 5 reference P95 values at 1M nodes, in milliseconds.
pub const REFERENCE_P95_MS: [(&str, f64); 3] = [("seed_1hop", 12.8), ("bm25_text", 97.3), ("cosine_top10", 3.1)];
pub const P95_GATE_MS: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadConfig {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub seed: u64,
    pub defer_ann: bool,
    /// On-disk store; in memory when `None`.
    pub dir: Option<PathBuf>,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self { n_nodes: 100_000, n_edges: 250_000, seed: 7, defer_ann: true, dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub nodes: usize,
    pub edges: usize,
    pub load_secs: f64,
    pub writes_per_sec: f64,
    pub rebuild_secs: f64,
    pub store_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub shape: String,
    pub latency: Quantiles,
    /// Average number of results per probe.
    pub mean_results: f64,
    pub reference_p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadReport {
    pub shapes: Vec<ShapeReport>,
}

impl ReadReport {
    pub fn p95(&self, shape: &str) -> Option<f64> {
        self.shapes.iter().find(|s| s.shape == shape).map(|s| s.latency.p95_ms)
    }

    pub fn all_under(&self, gate_ms: f64) -> bool {
        self.shapes.iter().all(|s| s.latency.p95_ms < gate_ms)
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "ri", "mo", "te", "lu", "san", "vi", "do", "pel", "ar", "nes", "qui", "bo", "ze", "tal", "fi", "gor", "un",
    "hei", "ma", "cre", "os", "yu", "lin",
];

/// A fixed vocabulary of synthetic words.
pub fn vocabulary(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut words: Vec<String> = (0..n)
        .map(|i| {
            let parts = rng.random_range(2..=3);
            let mut w: String = (0..parts).map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty")).collect();
            w.push_str(&(i % 97).to_string());
            w
        })
        .collect();
    words.sort();
    words.dedup();
    words
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

const TYPES: [NodeType; 4] = [NodeType::ENTITY, NodeType::EVENT, NodeType::FACT, NodeType::TURN];

pub fn bench_config(dim: usize) -> EngineConfig {
    let clock = Arc::new(ManualClock::new(Timestamp::from_secs(1_700_000_000)));
    EngineConfig::new(dim).clock(clock).recluster(ReclusterMode::Off).sync(false)
}

fn drafts(cfg: &LoadConfig, vocab: &[String]) -> Vec<NodeDraft> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = Timestamp::from_secs(1_600_000_000);
    (0..cfg.n_nodes)
        .map(|i| {
            let t = TYPES[i % TYPES.len()].clone();
            let words: Vec<&str> = (0..8).map(|_| vocab.choose(&mut rng).expect("vocabulary").as_str()).collect();
            let from = Timestamp::from_micros(base.micros() + i as i64 * 1_000_000);
            NodeDraft::new(t.clone(), format!("{}-{i}", t.as_str().to_lowercase()), words.join(" "))
                .created_at(from)
                .valid(ValidityInterval::open(from))
                .embedding(random_unit(&mut rng, DIM))
        })
        .collect()
}

/// Random `refers_to` edges; pairs may repeat, and repeats collapse onto
/// one content-addressed edge.
fn edge_drafts(seed: u64, ids: &[Hash], n_edges: usize) -> Vec<EdgeDraft> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(1));
    (0..n_edges)
        .map(|_| {
            let a = ids[rng.random_range(0..ids.len())];
            let mut b = ids[rng.random_range(0..ids.len())];
            if a == b {
                b = ids[(rng.random_range(0..ids.len() - 1) + 1) % ids.len()];
            }
            EdgeDraft::new(EdgeType::REFERS_TO, a, b)
        })
        .collect()
}

/// Load `n_nodes` nodes and `n_edges` edges in one transaction.
pub fn bench_load(cfg: &LoadConfig) -> Result<(Engine, LoadReport)> {
    let engine = match &cfg.dir {
        Some(d) => Engine::open(d, bench_config(DIM))?,
        None => Engine::in_memory(bench_config(DIM)),
    };
    let vocab = vocabulary(cfg.seed, 2_000);
    let nodes = drafts(cfg, &vocab);
    let (seed, n_edges) = (cfg.seed, cfg.n_edges);
    let start = Instant::now();
    if cfg.defer_ann {
        engine.bulk_load(nodes, |ids| edge_drafts(seed, ids, n_edges))?;
    } else {
        engine.transact(|tx| {
            let ids = nodes.into_iter().map(|n| tx.put_node(n).map(|o| o.id)).collect::<Result<Vec<_>>>()?;
            for e in edge_drafts(seed, &ids, n_edges) {
                tx.write_edge(e)?;
            }
            Ok(())
        })?;
    }
    let load = start.elapsed();
    let start = Instant::now();
    if cfg.defer_ann {
        engine.rebuild_index(true)?;
    }
    let rebuild = start.elapsed();
    let writes = engine.node_count() + engine.edge_count();
    let report = LoadReport {
        nodes: engine.node_count(),
        edges: engine.edge_count(),
        load_secs: load.as_secs_f64(),
        writes_per_sec: writes as f64 / load.as_secs_f64().max(1e-9),
        rebuild_secs: rebuild.as_secs_f64(),
        store_bytes: engine.store_size_bytes(),
    };
    Ok((engine, report))
}

fn all_ids(engine: &Engine) -> Vec<Hash> {
    engine.read(|st| {
        let mut v: Vec<Hash> = st.node_ids().copied().collect();
        v.sort_unstable();
        v
    })
}

/// Time `probes` random probes for each read shape. Probes never write.
pub fn bench_read(engine: &Engine, probes: usize, seed: u64) -> Result<ReadReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = all_ids(engine);
    let filter = LaneFilter::new(engine.now());
    // Two terms drawn from a stored Turn, so every probe has matches.
    let turns = engine.read(|st| st.of_type(&NodeType::TURN).to_vec());
    let mut queries = Vec::with_capacity(probes);
    for _ in 0..probes {
        let Some(h) = turns.choose(&mut rng) else { break };
        let content = engine.get_node(h, false)?.content;
        let words: Vec<&str> = content.split_whitespace().collect();
        queries.push(format!("{} {}", words.choose(&mut rng).unwrap_or(&""), words.choose(&mut rng).unwrap_or(&"")));
    }
    let mut shapes = Vec::new();
    let mut time = |name: &str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<usize>| -> Result<()> {
        let mut samples = Vec::with_capacity(probes);
        let mut results = 0usize;
        for _ in 0..probes {
            let start = Instant::now();
            results += std::hint::black_box(f(&mut rng)?);
            samples.push(start.elapsed());
        }
        let mean_results = results as f64 / probes.max(1) as f64;
        let reference = REFERENCE_P95_MS.iter().find(|(n, _)| *n == name).map_or(f64::NAN, |(_, r)| *r);
        shapes.push(ShapeReport { shape: name.into(), latency: quantiles(&samples), mean_results, reference_p95_ms: reference });
        Ok(())
    };
    time("seed_1hop", &mut |rng| {
        let seed = *ids.choose(rng).expect("loaded store");
        let q = Query::seeds([seed]).op(Op::Traverse { edge_type: None, direction: Direction::Both, depth: Some(1) });
        Ok(engine.execute(&q)?.nodes.len())
    })?;
    let mut next = queries.into_iter().cycle();
    time("bm25_text", &mut |_| {
        let q = next.next().unwrap_or_default();
        Ok(engine.bm25(&q, 10, &filter).entries.len())
    })?;
    time("cosine_top10", &mut |rng| {
        let q = random_unit(rng, DIM);
        Ok(engine.knn(&q, 10)?.len())
    })?;
    Ok(ReadReport { shapes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnReport {
    pub records: usize,
    pub probes: usize,
    pub recall_at_10: f64,
    pub ann_median_us: f64,
    pub brute_median_us: f64,
    pub speedup: f64,
}

/// Recall and median query time of the ANN index against an exact scan.
pub fn ann_vs_brute(records: usize, probes: usize, seed: u64) -> Result<AnnReport> {
    let engine = Engine::in_memory(bench_config(DIM));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<NodeDraft> = (0..records)
        .map(|i| NodeDraft::new(NodeType::FACT, format!("r{i}"), "").embedding(random_unit(&mut rng, DIM)))
        .collect();
    engine.bulk_load(nodes, |_| Vec::new())?;
    engine.rebuild_index(true)?;
    let queries: Vec<Vec<f32>> = (0..probes).map(|_| random_unit(&mut rng, DIM)).collect();
    let (mut ann_t, mut brute_t, mut hits) = (Vec::new(), Vec::new(), 0usize);
    for q in &queries {
        let s = Instant::now();
        let ann = std::hint::black_box(engine.knn(q, 10)?);
        ann_t.push(s.elapsed());
        let s = Instant::now();
        let exact = std::hint::black_box(engine.brute_force_knn(q, 10)?);
        brute_t.push(s.elapsed());
        hits += ann.iter().filter(|(h, _)| exact.iter().any(|(x, _)| x == h)).count();
    }
    let us = |d: Duration| d.as_secs_f64() * 1e6;
    let (a, b) = (us(median(&ann_t)), us(median(&brute_t)));
    Ok(AnnReport {
        records,
        probes,
        recall_at_10: hits as f64 / (10 * probes) as f64,
        ann_median_us: a,
        brute_median_us: b,
        speedup: b / a.max(1e-9),
    })
}
