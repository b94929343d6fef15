use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldmem_core::resolver::{Candidate, ResolveCtx, Resolution, Thresholds, TierPreference};
use worldmem_core::{Engine, EngineConfig, ManualClock, NodeDraft, NodeType, ReclusterMode, Tier, Timestamp};

use crate::{ensure, Outcome};

fn engine(dim: usize) -> Engine {
    let clock = Arc::new(ManualClock::new(Timestamp::from_secs(1_700_000_000)));
    Engine::in_memory(EngineConfig::new(dim).clock(clock).recluster(ReclusterMode::Off))
}

fn with_ctx<T>(e: &Engine, f: impl FnOnce(&ResolveCtx<'_>) -> T) -> T {
    let now = e.now();
    e.read(|st| f(&ResolveCtx { st, now, thresholds: Thresholds::default(), tiebreaker: &TierPreference, exclude: &|_| false }))
}

fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

const ALPHA: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn name(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(6..=12)).map(|_| ALPHA[rng.random_range(0..26)] as char).collect()
}

fn typo(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut b: Vec<u8> = s.bytes().collect();
    for _ in 0..rng.random_range(1..=3) {
        let i = rng.random_range(3..b.len());
        match rng.random_range(0..3) {
            0 => b[i] = ALPHA[rng.random_range(0..26)],
            1 if b.len() > 5 => {
                b.remove(i);
            }
            _ => b.insert(i, ALPHA[rng.random_range(0..26)]),
        }
    }
    String::from_utf8(b).unwrap()
}

fn fuzzy_tier() -> Result<(usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut above, mut below) = (0, 0);
    for _ in 0..400_000 {
        if above >= 50 && below >= 50 {
            break;
        }
        let a = name(&mut rng);
        let b = typo(&mut rng, &a);
        let reference = strsim::jaro_winkler(&a, &b);
        if a == b || !(0.90..=0.94).contains(&reference) {
            continue;
        }
        let accept = reference >= 0.92;
        if (accept && above >= 50) || (!accept && below >= 50) {
            continue;
        }
        let e = engine(4);
        let stored = e.put_node(NodeDraft::new(NodeType::ENTITY, a.as_str(), "")).unwrap().id;
        let got = with_ctx(&e, |ctx| ctx.fuzzy(&Candidate::new(NodeType::ENTITY, b.as_str())));
        ensure!(got.is_some() == accept, "{a}/{b}: reference {reference:.6}, matched {}", got.is_some());
        if let Some(m) = got {
            ensure!(m.id == stored && m.tier == Tier::Fuzzy, "{a}/{b}: wrong match");
            above += 1;
        } else {
            below += 1;
        }
    }
    ensure!(above >= 50 && below >= 50, "only {above} above and {below} below the threshold");
    Ok((above, below))
}

fn embedding_tier() -> Result<usize, String> {
    let dim = 8;
    let e = engine(dim);
    let mut anchor = vec![0.0f32; dim];
    anchor[0] = 1.0;
    let stored = e.put_node(NodeDraft::new(NodeType::ENTITY, "Orion Labs", "").embedding(anchor.clone())).unwrap().id;
    let mut n = 0;
    for delta in [-0.03, -3e-3, -3e-4, -3e-5, -3e-6, 3e-6, 3e-5, 3e-4, 3e-3, 0.03] {
        let c: f64 = 0.88 + delta;
        let mut q = vec![0.0f32; dim];
        q[0] = c as f32;
        q[1] = (1.0 - c * c).sqrt() as f32;
        let reference = cosine64(&q, &anchor);
        let got = with_ctx(&e, |ctx| ctx.embedding(&Candidate::new(NodeType::ENTITY, "Quasar").embedding(q.clone())))
            .map_err(|err| err.to_string())?;
        ensure!(got.is_some() == (reference >= 0.88), "cosine {reference:.8}: matched {}", got.is_some());
        if let Some(m) = got {
            ensure!(m.id == stored && m.tier == Tier::Embedding, "wrong embedding match");
        }
        n += 1;
    }
    Ok(n)
}

fn phonetic() -> Outcome {
    let e = engine(4);
    let p = e.put_node(NodeDraft::new(NodeType::ENTITY, "Phillip", "")).unwrap().id;
    e.put_node(NodeDraft::new(NodeType::ENTITY, "Margaret", "")).unwrap();
    ensure!(strsim::jaro_winkler("phillip", "filip") < 0.92, "pair would match by spelling alone");
    let r = with_ctx(&e, |ctx| ctx.resolve(&Candidate::new(NodeType::ENTITY, "Filip"))).map_err(|err| err.to_string())?;
    match r {
        Resolution::Resolved(m) if m.id == p && m.tier == Tier::Phonetic => Ok(String::new()),
        other => Err(format!("Filip resolved to {other:?}")),
    }
}

pub fn thresholds() -> Outcome {
    let (above, below) = fuzzy_tier()?;
    let straddles = embedding_tier()?;
    phonetic()?;
    Ok(format!("fuzzy {above} above / {below} below 0.92, {straddles} cosine straddles of 0.88, Phillip~Filip"))
}
