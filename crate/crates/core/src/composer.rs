//! Composed world embeddings.
//!
//! v1: `norm((c_W + Σ v_c) / (|C| + 1))`
//! v2: `α = softmax(c_W·v_c / √d)`, `norm(c_W + Σ α_c v_c)`
//!
//! `c_W` is the world's content anchor, `v_c` each child's effective vector.
//! Arithmetic is f64; results are stored as f32.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::store::Txn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeMode {
    V1Mean,
    V2Attention,
}

impl std::str::FromStr for ComposeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" | "v1_mean" | "mean" => Ok(ComposeMode::V1Mean),
            "v2" | "v2_attention" | "attention" => Ok(ComposeMode::V2Attention),
            _ => Err(Error::Parse(format!("unknown compose mode {s:?}"))),
        }
    }
}

/// Softmax attention weights of `children` against `query`.
pub fn attention_weights(query: &[f32], children: &[&[f32]]) -> Vec<f64> {
    if children.is_empty() {
        return Vec::new();
    }
    let scale = 1.0 / (query.len() as f64).sqrt();
    let logits: Vec<f64> = children
        .iter()
        .map(|c| query.iter().zip(c.iter()).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() * scale)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Compose one world vector from its content anchor and its children's
/// effective vectors.
pub fn compose_vectors(content: &[f32], children: &[&[f32]], mode: ComposeMode) -> Result<Vec<f32>> {
    let d = content.len();
    if let Some(c) = children.iter().find(|c| c.len() != d) {
        return Err(Error::DimMismatch { expected: d, got: c.len() });
    }
    let mut acc: Vec<f64> = content.iter().map(|x| *x as f64).collect();
    match mode {
        ComposeMode::V1Mean => {
            for c in children {
                for (a, x) in acc.iter_mut().zip(c.iter()) {
                    *a += *x as f64;
                }
            }
            let n = (children.len() + 1) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        ComposeMode::V2Attention => {
            for (w, c) in attention_weights(content, children).into_iter().zip(children) {
                for (a, x) in acc.iter_mut().zip(c.iter()) {
                    *a += w * *x as f64;
                }
            }
        }
    }
    let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::ZeroNormResult);
    }
    Ok(acc.into_iter().map(|a| (a / norm) as f32).collect())
}

/// Recompose `world` inside a transaction and write its effective vector.
pub fn compose_in(tx: &mut Txn<'_>, world: Hash, mode: ComposeMode) -> Result<Vec<f32>> {
    let st = tx.state();
    let row = st.row(&world).ok_or(Error::NotFound(world))?;
    let content = st.embedding(&world).ok_or(Error::MissingEmbedding(world))?.content.clone();
    let mut kids: Vec<&[f32]> = Vec::with_capacity(row.children.len());
    for c in &row.children {
        kids.push(&st.embedding(c).ok_or(Error::MissingEmbedding(*c))?.effective);
    }
    let v = compose_vectors(&content, &kids, mode)?;
    tx.set_effective(world, v.clone())?;
    Ok(v)
}

/// Recompose every ancestor of `changed`, nearest first.
pub fn propagate_in(tx: &mut Txn<'_>, changed: Hash, mode: ComposeMode) -> Result<Vec<Hash>> {
    let mut out = Vec::new();
    let mut parent = tx.row(&changed).ok_or(Error::NotFound(changed))?.parent_world;
    while let Some(p) = parent {
        compose_in(tx, p, mode)?;
        out.push(p);
        parent = tx.row(&p).ok_or(Error::NotFound(p))?.parent_world;
    }
    Ok(out)
}

/// Generator settings for the synthetic world-retrieval study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    pub dim: usize,
    pub worlds: usize,
    pub dominant: usize,
    pub noise: usize,
    pub queries: usize,
    /// Gaussian jitter added to the theme for the world's content anchor.
    pub anchor_jitter: f64,
    /// Gaussian jitter added to the theme for each dominant child.
    pub dominant_jitter: f64,
    /// Gaussian jitter added to the theme for each query.
    pub query_jitter: f64,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            dim: 64,
            worlds: 50,
            dominant: 2,
            noise: 18,
            queries: 100,
            anchor_jitter: 0.75,
            dominant_jitter: 0.5,
            query_jitter: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub v1_top1: f64,
    pub v2_top1: f64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

fn jittered(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f32> {
    let per = sigma / (base.len() as f64).sqrt();
    unit(base.iter().map(|b| b + per * gaussian(rng)).collect())
}

/// Each world has a random theme; its anchor and dominant children sit near
/// the theme, its noise children are uniform random directions. Queries are
/// jittered themes; a hit is the query's own world ranked first by cosine.
pub fn run_compose_study(seed: u64, p: StudyParams) -> StudyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let themes: Vec<Vec<f64>> = (0..p.worlds)
        .map(|_| {
            let v: Vec<f64> = (0..p.dim).map(|_| gaussian(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut v1 = Vec::with_capacity(p.worlds);
    let mut v2 = Vec::with_capacity(p.worlds);
    for theme in &themes {
        let anchor = jittered(&mut rng, theme, p.anchor_jitter);
        let mut children: Vec<Vec<f32>> = (0..p.dominant).map(|_| jittered(&mut rng, theme, p.dominant_jitter)).collect();
        for _ in 0..p.noise {
            children.push(unit((0..p.dim).map(|_| gaussian(&mut rng)).collect()));
        }
        let refs: Vec<&[f32]> = children.iter().map(Vec::as_slice).collect();
        v1.push(compose_vectors(&anchor, &refs, ComposeMode::V1Mean).expect("nonzero composition"));
        v2.push(compose_vectors(&anchor, &refs, ComposeMode::V2Attention).expect("nonzero composition"));
    }
    let (mut hit1, mut hit2) = (0usize, 0usize);
    for q in 0..p.queries {
        let target = q % p.worlds;
        let query = jittered(&mut rng, &themes[target], p.query_jitter);
        let top = |worlds: &[Vec<f32>]| {
            (0..worlds.len())
                .max_by(|a, b| {
                    crate::vector::cosine(&query, &worlds[*a])
                        .total_cmp(&crate::vector::cosine(&query, &worlds[*b]))
                        .then(b.cmp(a))
                })
                .expect("at least one world")
        };
        hit1 += usize::from(top(&v1) == target);
        hit2 += usize::from(top(&v2) == target);
    }
    StudyResult { v1_top1: hit1 as f64 / p.queries as f64, v2_top1: hit2 as f64 / p.queries as f64 }
}
