#![allow(dead_code)]

use std::sync::Arc;

use worldmem_core::{Engine, EngineConfig, ManualClock, ReclusterMode, Timestamp};

pub const T0: i64 = 1_700_000_000;

pub fn secs(s: i64) -> Timestamp {
    Timestamp::from_secs(T0 + s)
}

/// In-memory engine on a frozen manual clock at `secs(0)`.
pub fn engine(dim: usize) -> (Engine, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(secs(0)));
    let cfg = EngineConfig::new(dim).clock(clock.clone()).recluster(ReclusterMode::Off);
    (Engine::in_memory(cfg), clock)
}

pub fn unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}
