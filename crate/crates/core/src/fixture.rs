//! Hand-built decoder weights that reply to prompts with fixed scripts.
//!
//! The model is an ordinary two-layer decoder; only its weights are special.
//! Layer 0 has a previous-token head (rotary phase chosen so offset 1 scores
//! highest) and an intent head that attends to the most recent marker token
//! (`<human>` or a trigger word) through a low-frequency rotary pair. Layer 1's
//! MLP is a lookup table keyed on `(intent, previous token, current token)`
//! that writes the next token's unembedding direction. Unscripted contexts
//! fall through to `<|endoftext|>`.
//!
//! Every feature is a `+1/-1` pair across the two halves of the residual, so
//! residuals stay zero-mean and layer norms only rescale. All weight values
//! are chosen so the model still follows its scripts after q4 quantization.

use std::collections::{BTreeMap, HashMap};
use std::f32::consts::PI;

use crate::error::{Error, Result};
use crate::modelfile::LoadedModel;
use crate::qtensor::DenseTensor;
use crate::tokenizer::{TokenId, Vocab, BOT, END_OF_TEXT, HUMAN};
use crate::transformer::{
    LayerNorm, LayerWeights, ModelConfig, ModelWeights, Tensor, ROTARY_BASE,
};

/// One canned reply.
#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    /// Words (single vocabulary entries) that select this reply. Empty means
    /// the default reply, used when the latest human turn has no trigger.
    pub triggers: Vec<String>,
    pub reply: String,
}

impl Script {
    pub fn new(triggers: &[&str], reply: &str) -> Self {
        Script {
            triggers: triggers.iter().map(|s| s.to_string()).collect(),
            reply: reply.to_string(),
        }
    }
}

/// The demo dialogue: a greeting plus one reply per action kind.
pub fn demo_scripts() -> Vec<Script> {
    vec![
        Script::new(&[], "Hello"),
        Script::new(&["Call", "call", " call"], "<call>John<call>"),
        Script::new(
            &["Search", "search", " search"],
            "<search>Highest building in the world<search>",
        ),
        Script::new(
            &["Schedule", "schedule", " schedule"],
            "<calendar>2023-05-20T09:00:00/Meeting<calendar>",
        ),
    ]
}

/// The demo scripts on the 512-entry fixture vocabulary, at f32.
pub fn demo_model() -> Result<LoadedModel> {
    let vocab = Vocab::fixture(DEMO_VOCAB)?;
    let (config, weights) = scripted(&vocab, &demo_scripts())?;
    Ok(LoadedModel {
        config,
        weights,
        vocab,
    })
}

pub const DEMO_VOCAB: usize = 512;

pub fn scripted_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 256,
        vocab_size,
        max_context: 256,
        rotary_fraction: 0.5,
        layernorm_eps: 1e-5,
    }
}

const PREV_HEAD: usize = 0;
const INTENT_HEAD: usize = 1;
/// Rotary pairs used by the previous-token head.
const PREV_PAIRS: usize = 9;
/// Rotary pair (frequency 0.01) giving the intent head its recency bias.
const RECENCY_PAIR: usize = 8;
const RECENCY_PHASE: f32 = 0.8;
/// Score of the most recent marker at offset 0, before recency decay.
const MARKER_BASE: f32 = 1000.0;
const MARKER_RECENCY: f32 = 1000.0;
const PREV_SCORE: f32 = 256.0;
const NEURON_GAIN: f32 = 8.0;
const EOS_BASELINE: f32 = 0.5;

/// Residual layout: dim 0 is the constant fed by layernorm biases, then
/// slots for the current token, previous token, intent and next token. Each
/// feature `f` also owns `f + d/2` as its negative twin.
struct Layout {
    half: usize,
    tokens: Vec<TokenId>,
    index: HashMap<TokenId, usize>,
    n_intents: usize,
}

impl Layout {
    const CONST: usize = 0;

    fn n(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Slot index of a token; 0 is the shared "other" bucket.
    fn slot(&self, t: TokenId) -> usize {
        self.index.get(&t).map_or(0, |i| i + 1)
    }

    fn cur(&self, t: TokenId) -> usize {
        1 + self.slot(t)
    }

    fn prev(&self, t: TokenId) -> usize {
        1 + self.n() + self.slot(t)
    }

    fn intent(&self, i: usize) -> usize {
        1 + 2 * self.n() + i
    }

    fn next(&self, t: TokenId) -> usize {
        1 + 2 * self.n() + self.n_intents + self.slot(t)
    }

    fn used(&self) -> usize {
        1 + 3 * self.n() + self.n_intents
    }
}

struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Mat {
    fn new(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn add(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] += v;
    }

    fn into_tensor(self) -> Tensor {
        Tensor::F32(DenseTensor::new(vec![self.rows, self.cols], self.data).unwrap())
    }
}

fn vector(values: Vec<f32>) -> Tensor {
    Tensor::F32(DenseTensor::new(vec![values.len()], values).unwrap())
}

/// Builds weights for `scripts` over `vocab`.
///
/// Fails if a trigger is not a single vocabulary entry, if two steps of one
/// script need different next tokens in the same context, or if the scripts
/// need more features than the residual holds.
pub fn scripted(vocab: &Vocab, scripts: &[Script]) -> Result<(ModelConfig, ModelWeights)> {
    let config = scripted_config(vocab.len());
    config.validate()?;
    let d = config.d_model;
    let hd = config.head_dim();
    let special = |lit: &str| {
        vocab
            .special_id(lit)
            .ok_or_else(|| Error::InvalidInput(format!("vocab lacks {lit}")))
    };
    let (human, bot, eos) = (special(HUMAN)?, special(BOT)?, special(END_OF_TEXT)?);
    let colon = b':' as TokenId;

    // intent 0 is "none"; scripts with triggers get 1.. in order
    let mut intent_of_script = Vec::new();
    let mut triggers: Vec<(TokenId, usize)> = Vec::new();
    let mut n_intents = 1;
    for s in scripts {
        if s.triggers.is_empty() {
            intent_of_script.push(0);
            continue;
        }
        for w in &s.triggers {
            let ids = vocab.encode(w);
            if ids.len() != 1 || vocab.is_special(ids[0]) {
                return Err(Error::InvalidInput(format!(
                    "trigger `{w}` is not a single ordinary vocabulary entry"
                )));
            }
            triggers.push((ids[0], n_intents));
        }
        intent_of_script.push(n_intents);
        n_intents += 1;
    }

    // (intent, prev, cur) -> next
    let mut table: BTreeMap<(usize, TokenId, TokenId), TokenId> = BTreeMap::new();
    let mut tokens = vec![human, bot, colon, eos];
    for (s, &intent) in scripts.iter().zip(&intent_of_script) {
        let mut seq = vec![bot, colon];
        seq.extend(vocab.encode(&s.reply));
        seq.push(eos);
        for w in seq.windows(3) {
            let key = (intent, w[0], w[1]);
            match table.insert(key, w[2]) {
                Some(old) if old != w[2] => {
                    return Err(Error::InvalidInput(format!(
                        "script `{}` needs two different continuations after tokens {:?}",
                        s.reply,
                        (w[0], w[1])
                    )))
                }
                _ => {}
            }
        }
        tokens.extend(seq);
    }
    tokens.extend(triggers.iter().map(|(t, _)| *t));
    tokens.sort_unstable();
    tokens.dedup();
    let layout = Layout {
        half: d / 2,
        index: tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect(),
        tokens,
        n_intents,
    };
    if layout.used() > layout.half || layout.n() > hd || n_intents > hd {
        return Err(Error::InvalidInput(format!(
            "scripts need {} features, the residual holds {}",
            layout.used(),
            layout.half
        )));
    }
    if table.len() > config.mlp_dim() {
        return Err(Error::InvalidInput("too many script steps".into()));
    }
    let pair = |m: &mut Mat, row: usize, feature: usize, v: f32| {
        m.add(row, feature, v);
        m.add(row, feature + layout.half, -v);
    };

    let mut weights = ModelWeights::zeros(&config);

    let mut embed = Mat::new(config.vocab_size, d);
    for t in 0..config.vocab_size {
        pair(&mut embed, t, layout.cur(t as TokenId), 1.0);
    }
    weights.embed = embed.into_tensor();

    // Layer 0 sees one feature pair; layer 1 sees three (token, previous, intent).
    let norm = |features: f32| {
        let g = (2.0 * features / d as f32).sqrt();
        let mut bias = vec![0.0; d];
        bias[Layout::CONST] = 1.0;
        LayerNorm {
            gain: vector(vec![g; d]),
            bias: vector(bias),
        }
    };

    let rot = config.rotary_dims();
    let rot_half = rot / 2;
    let theta = |i: usize| ROTARY_BASE.powf(-2.0 * i as f32 / rot as f32);
    let score_scale = (hd as f32).sqrt();
    let q = |head: usize, dim: usize| head * hd + dim;
    let k = |head: usize, dim: usize| d + head * hd + dim;
    let v = |head: usize, dim: usize| 2 * d + head * hd + dim;

    let mut qkv = Mat::new(3 * d, d);
    // previous-token head: q/k are constant, phase-shifted so offset 1 wins
    let amp = (PREV_SCORE * score_scale / PREV_PAIRS as f32).sqrt();
    for i in 0..PREV_PAIRS {
        let th = theta(i);
        qkv.add(q(PREV_HEAD, i), Layout::CONST, amp * th.cos());
        qkv.add(q(PREV_HEAD, i + rot_half), Layout::CONST, -amp * th.sin());
        qkv.add(k(PREV_HEAD, i), Layout::CONST, amp);
    }
    for (s, &t) in layout.tokens.iter().enumerate() {
        qkv.add(v(PREV_HEAD, s + 1), layout.cur(t), 1.0);
    }

    // intent head: markers score high, the most recent one highest
    let markers: Vec<(TokenId, usize)> = std::iter::once((human, 0))
        .chain(triggers.iter().copied())
        .collect();
    let base_amp = (MARKER_BASE * score_scale).sqrt();
    let rec_amp = (MARKER_RECENCY * score_scale).sqrt();
    qkv.add(q(INTENT_HEAD, rot), Layout::CONST, base_amp);
    qkv.add(q(INTENT_HEAD, RECENCY_PAIR), Layout::CONST, rec_amp * RECENCY_PHASE.cos());
    qkv.add(
        q(INTENT_HEAD, RECENCY_PAIR + rot_half),
        Layout::CONST,
        rec_amp * RECENCY_PHASE.sin(),
    );
    debug_assert!(theta(RECENCY_PAIR) * config.max_context as f32 + RECENCY_PHASE < PI + 0.3);
    for &(t, intent) in &markers {
        qkv.add(k(INTENT_HEAD, rot), layout.cur(t), base_amp);
        qkv.add(k(INTENT_HEAD, RECENCY_PAIR), layout.cur(t), rec_amp);
        if intent != 0 {
            qkv.add(v(INTENT_HEAD, intent), layout.cur(t), 1.0);
            qkv.add(v(INTENT_HEAD, 0), layout.cur(t), -1.0);
        }
    }
    qkv.add(v(INTENT_HEAD, 0), Layout::CONST, 1.0);

    let mut attn_out = Mat::new(d, d);
    for (s, &t) in layout.tokens.iter().enumerate() {
        pair_col(&mut attn_out, layout.prev(t), layout.half, PREV_HEAD * hd + s + 1);
    }
    // "other" bucket
    pair_col(&mut attn_out, layout.prev(TokenId::MAX), layout.half, PREV_HEAD * hd);
    for i in 0..n_intents {
        pair_col(&mut attn_out, layout.intent(i), layout.half, INTENT_HEAD * hd + i);
    }
    // other-bucket tokens need a value too
    for t in 0..config.vocab_size as TokenId {
        if !layout.index.contains_key(&t) {
            qkv.add(v(PREV_HEAD, 0), layout.cur(t), 1.0);
        }
    }

    let mut up = Mat::new(config.mlp_dim(), d);
    let mut down = Mat::new(d, config.mlp_dim());
    for (n, (&(intent, prev, cur), &next)) in table.iter().enumerate() {
        up.add(n, layout.cur(cur), NEURON_GAIN);
        up.add(n, layout.prev(prev), NEURON_GAIN);
        up.add(n, layout.intent(intent), NEURON_GAIN);
        up.add(n, Layout::CONST, -2.5 * NEURON_GAIN);
        down.add(layout.next(next), n, 1.0);
        down.add(layout.next(next) + layout.half, n, -1.0);
    }

    let mut unembed = Mat::new(config.vocab_size, d);
    for &t in &layout.tokens {
        pair(&mut unembed, t as usize, layout.next(t), 1.0);
    }
    unembed.add(eos as usize, Layout::CONST, EOS_BASELINE);

    weights.layers[0] = LayerWeights {
        ln_attn: norm(1.0),
        ln_mlp: norm(1.0),
        qkv: qkv.into_tensor(),
        attn_out: attn_out.into_tensor(),
        ..weights.layers[0].clone()
    };
    weights.layers[1] = LayerWeights {
        ln_attn: norm(3.0),
        ln_mlp: norm(3.0),
        mlp_up: up.into_tensor(),
        mlp_down: down.into_tensor(),
        ..weights.layers[1].clone()
    };
    let mut final_bias = vec![0.0; d];
    final_bias[Layout::CONST] = 1.0;
    weights.final_norm = LayerNorm {
        gain: vector(vec![1.0; d]),
        bias: vector(final_bias),
    };
    weights.unembed = unembed.into_tensor();
    Ok((config, weights))
}

/// Routes attention-output column `col` into residual feature `feature`.
fn pair_col(m: &mut Mat, feature: usize, half: usize, col: usize) {
    m.add(feature, col, 1.0);
    m.add(feature + half, col, -1.0);
}
