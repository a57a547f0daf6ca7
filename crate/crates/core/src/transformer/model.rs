use super::config::{ModelConfig, ROTARY_BASE};
use super::weights::{LayerNorm, ModelWeights, Tensor};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Per-layer keys and values of every past position.
#[derive(Clone, Debug)]
pub struct KVCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
    capacity: usize,
    d_model: usize,
}

impl KVCache {
    pub fn new(config: &ModelConfig) -> Self {
        KVCache {
            keys: vec![Vec::new(); config.n_layers],
            values: vec![Vec::new(); config.n_layers],
            len: 0,
            capacity: config.max_context,
            d_model: config.d_model,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        for k in &mut self.keys {
            k.clear();
        }
        for v in &mut self.values {
            v.clear();
        }
        self.len = 0;
    }

    fn key(&self, layer: usize, pos: usize) -> &[f32] {
        &self.keys[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }

    fn value(&self, layer: usize, pos: usize) -> &[f32] {
        &self.values[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }
}

/// A GPT-NeoX style decoder: parallel residual blocks
/// `x + Attn(LN1(x)) + MLP(LN2(x))`, rotary embeddings on the leading
/// `rotary_fraction` of every head, causal attention.
#[derive(Clone, Debug)]
pub struct Transformer {
    config: ModelConfig,
    weights: ModelWeights,
    /// `theta_i` for each rotary pair.
    inv_freq: Vec<f32>,
}

impl Transformer {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        weights.validate(&config)?;
        let rot = config.rotary_dims();
        let inv_freq = (0..rot / 2)
            .map(|i| ROTARY_BASE.powf(-2.0 * i as f32 / rot as f32))
            .collect();
        Ok(Transformer {
            config,
            weights,
            inv_freq,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn new_cache(&self) -> KVCache {
        KVCache::new(&self.config)
    }

    /// Runs `tokens` after whatever `cache` already holds and returns one
    /// logits row per new token. The cache grows by `tokens.len()`.
    pub fn forward(&self, tokens: &[TokenId], cache: &mut KVCache) -> Result<Vec<Vec<f32>>> {
        let needed = cache.len + tokens.len();
        if needed > self.config.max_context {
            return Err(Error::ContextFull {
                needed,
                capacity: self.config.max_context,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidToken(bad));
        }
        let mut logits = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            logits.push(self.step(tok, cache)?);
        }
        Ok(logits)
    }

    fn step(&self, token: TokenId, cache: &mut KVCache) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let pos = cache.len;
        let mut x = self.weights.embed.row(token as usize);

        for (li, layer) in self.weights.layers.iter().enumerate() {
            let h = layer_norm(&x, &layer.ln_attn, cfg.layernorm_eps);
            let qkv = layer.qkv.matvec(&h)?;
            let mut q = qkv[..d].to_vec();
            let mut k = qkv[d..2 * d].to_vec();
            let v = &qkv[2 * d..];
            self.apply_rotary(&mut q, pos);
            self.apply_rotary(&mut k, pos);
            cache.keys[li].extend_from_slice(&k);
            cache.values[li].extend_from_slice(v);

            let attn = self.attend(&q, li, pos, cache);
            let attn = layer.attn_out.matvec(&attn)?;

            let h2 = layer_norm(&x, &layer.ln_mlp, cfg.layernorm_eps);
            let mut up = layer.mlp_up.matvec(&h2)?;
            for u in &mut up {
                *u = gelu(*u);
            }
            let mlp = layer.mlp_down.matvec(&up)?;

            for i in 0..d {
                x[i] = x[i] + attn[i] + mlp[i];
            }
        }
        cache.len += 1;

        let h = layer_norm(&x, &self.weights.final_norm, cfg.layernorm_eps);
        self.weights.unembed.matvec(&h)
    }

    /// Causal attention of the query at `pos` over cached positions `0..=pos`.
    fn attend(&self, q: &[f32], layer: usize, pos: usize, cache: &KVCache) -> Vec<f32> {
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let mut out = vec![0.0f32; self.config.d_model];
        let mut scores = vec![0.0f32; pos + 1];
        for h in 0..self.config.n_heads {
            let span = h * hd..(h + 1) * hd;
            let qh = &q[span.clone()];
            for (p, s) in scores.iter_mut().enumerate() {
                let kh = &cache.key(layer, p)[span.clone()];
                *s = dot(qh, kh) * scale;
            }
            softmax_in_place(&mut scores);
            let oh = &mut out[span.clone()];
            for (p, &w) in scores.iter().enumerate() {
                let vh = &cache.value(layer, p)[span.clone()];
                for (o, v) in oh.iter_mut().zip(vh) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Rotates pairs `(i, i + rot/2)` of each head's leading `rot` dims by
    /// `pos * theta_i`.
    fn apply_rotary(&self, x: &mut [f32], pos: usize) {
        let hd = self.config.head_dim();
        let half = self.config.rotary_dims() / 2;
        for head in x.chunks_exact_mut(hd) {
            for (i, &theta) in self.inv_freq.iter().enumerate() {
                let (sin, cos) = (pos as f32 * theta).sin_cos();
                let a = head[i];
                let b = head[i + half];
                head[i] = a * cos - b * sin;
                head[i + half] = b * cos + a * sin;
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn layer_norm(x: &[f32], ln: &LayerNorm, eps: f32) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    let (Tensor::F32(g) | Tensor::F16(g)) = &ln.gain else {
        unreachable!("layernorm gain is dense");
    };
    let (Tensor::F32(b) | Tensor::F16(b)) = &ln.bias else {
        unreachable!("layernorm bias is dense");
    };
    x.iter()
        .zip(g.data().iter().zip(b.data()))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// tanh approximation of GELU.
pub(crate) fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

/// Numerically stable softmax.
pub fn softmax_in_place(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(xs: &[f32]) -> Vec<f32> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}
