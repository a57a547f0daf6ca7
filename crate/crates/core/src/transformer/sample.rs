use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    /// 0 selects greedy decoding.
    pub temperature: f32,
    /// Keep only the `top_k` most likely tokens; 0 disables the cut.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            temperature: 0.0,
            top_k: 0,
            seed: 0,
        }
    }
}

/// Seeded sampler. Draws are reproducible for a given seed and call sequence.
#[derive(Clone, Debug)]
pub struct Sampler {
    params: SamplerParams,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(params: SamplerParams) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        Sampler { params, rng }
    }

    pub fn params(&self) -> &SamplerParams {
        &self.params
    }

    pub fn sample(&mut self, logits: &[f32]) -> TokenId {
        sample(logits, &self.params, &mut self.rng)
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

pub fn sample(logits: &[f32], params: &SamplerParams, rng: &mut impl Rng) -> TokenId {
    if params.temperature <= 0.0 || params.top_k == 1 || logits.len() <= 1 {
        return argmax(logits);
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // stable: equal logits keep ascending id order
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    if params.top_k > 0 {
        order.truncate(params.top_k);
    }
    let max = logits[order[0]];
    let weights: Vec<f32> = order
        .iter()
        .map(|&i| ((logits[i] - max) / params.temperature).exp())
        .collect();
    let total: f32 = weights.iter().sum();
    let mut r = rng.gen::<f32>() * total;
    for (&i, &w) in order.iter().zip(&weights) {
        if r < w {
            return i as TokenId;
        }
        r -= w;
    }
    *order.last().unwrap() as TokenId
}
