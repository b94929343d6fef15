//! Text embedders for callers that have no embedding provider.

use std::fmt;

use crate::lexical::tokenize;

pub trait Embedder: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `None` when the text has no usable tokens.
    fn embed(&self, text: &str) -> Option<Vec<f32>>;
}

/// Signed feature hashing of tokens and token bigrams, unit-normalized.
/// Deterministic across platforms and runs.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add(&self, acc: &mut [f64], feature: &str, weight: f64) {
        let h = blake3::hash(feature.as_bytes());
        let b = h.as_bytes();
        let slot = u64::from_le_bytes(b[..8].try_into().expect("8 bytes")) % self.dim as u64;
        let sign = if b[8] & 1 == 0 { 1.0 } else { -1.0 };
        acc[slot as usize] += sign * weight;
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Option<Vec<f32>> {
        let tokens = tokenize(text);
        let mut acc = vec![0.0f64; self.dim];
        for t in &tokens {
            self.add(&mut acc, t, 1.0);
        }
        for w in tokens.windows(2) {
            self.add(&mut acc, &format!("{} {}", w[0], w[1]), 0.5);
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        (n > 0.0).then(|| acc.into_iter().map(|x| (x / n) as f32).collect())
    }
}
