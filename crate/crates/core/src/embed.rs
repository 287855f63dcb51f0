//! Deterministic hashed word n-gram text embedder.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// Highest word n-gram order (1 = unigrams only).
    pub max_order: usize,
}

impl Default for TextEmbedder {
    fn default() -> Self {
        Self {
            dim: 256,
            seed: 0x5eed,
            max_order: 2,
        }
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl TextEmbedder {
    /// Signed-hash bag of n-grams, L2-normalized; empty text maps to zeros.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let words = tokenize(text);
        let mut acc = vec![0f64; self.dim];
        for order in 1..=self.max_order.max(1) {
            for gram in words.windows(order) {
                let h = fnv1a(
                    self.seed.wrapping_add(order as u64),
                    gram.join(" ").as_bytes(),
                );
                let slot = (h % self.dim as u64) as usize;
                acc[slot] += if h >> 63 == 1 { -1.0 } else { 1.0 };
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        acc.iter().map(|v| (v / norm) as f32).collect()
    }
}
