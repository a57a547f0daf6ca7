use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::model::Transformer;
use super::sample::{Sampler, SamplerParams};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Utf8Stream, Vocab, HUMAN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndOfText,
    StopSequence,
    MaxContext,
    MaxTokens,
    Cancelled,
}

/// When generation halts besides `<|endoftext|>` and a full context.
#[derive(Clone, Debug, PartialEq)]
pub struct StopSpec {
    /// Literal texts that end generation. They are never delivered.
    pub sequences: Vec<String>,
    pub max_new_tokens: Option<usize>,
}

impl Default for StopSpec {
    fn default() -> Self {
        StopSpec {
            sequences: vec![HUMAN.to_string()],
            max_new_tokens: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    /// Sampled tokens, excluding a terminating `<|endoftext|>`.
    pub tokens: Vec<TokenId>,
    /// Exactly the text handed to the callback.
    pub text: String,
    pub stop_reason: StopReason,
    pub token_count: usize,
}

/// Holds back any tail of the decoded text that could still grow into a stop
/// sequence.
struct StopFilter<'a> {
    sequences: &'a [String],
    pending: String,
}

impl StopFilter<'_> {
    /// Appends `text`; returns what is safe to deliver and whether a stop
    /// sequence completed.
    fn push(&mut self, text: &str) -> (String, bool) {
        self.pending.push_str(text);
        let hit = self
            .sequences
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| self.pending.find(s.as_str()))
            .min();
        if let Some(at) = hit {
            let out = self.pending[..at].to_string();
            self.pending.clear();
            return (out, true);
        }
        let hold = self
            .sequences
            .iter()
            .map(|s| longest_suffix_prefix(&self.pending, s))
            .max()
            .unwrap_or(0);
        let cut = self.pending.len() - hold;
        let out = self.pending[..cut].to_string();
        self.pending.drain(..cut);
        (out, false)
    }

    fn finish(&mut self) -> String {
        std::mem::take(&mut self.pending)
    }
}

/// Length of the longest suffix of `text` that is a proper prefix of `pat`.
fn longest_suffix_prefix(text: &str, pat: &str) -> usize {
    let max = pat.len().saturating_sub(1).min(text.len());
    (1..=max)
        .rev()
        .find(|&n| text.is_char_boundary(text.len() - n) && pat.starts_with(&text[text.len() - n..]))
        .unwrap_or(0)
}

/// Samples tokens after `prompt` until `<|endoftext|>`, a stop sequence, the
/// context limit, `max_new_tokens` or cancellation. Text is handed to
/// `on_text` as it becomes final; stop-sequence text is withheld.
pub fn generate(
    model: &Transformer,
    vocab: &Vocab,
    prompt: &[TokenId],
    params: &SamplerParams,
    stop: &StopSpec,
    cancel: Option<&AtomicBool>,
    on_text: &mut dyn FnMut(&str),
) -> Result<GenerationResult> {
    let max_ctx = model.config().max_context;
    if prompt.is_empty() {
        return Err(Error::InvalidInput("empty prompt".into()));
    }
    if prompt.len() >= max_ctx {
        return Err(Error::ContextFull {
            needed: prompt.len() + 1,
            capacity: max_ctx,
        });
    }
    let eos = vocab.eos_id();
    let mut sampler = Sampler::new(params.clone());
    let mut cache = model.new_cache();
    let mut utf8 = Utf8Stream::default();
    let mut filter = StopFilter {
        sequences: &stop.sequences,
        pending: String::new(),
    };
    let mut tokens = Vec::new();
    let mut text = String::new();
    let mut emit = |s: &str, text: &mut String| {
        if !s.is_empty() {
            text.push_str(s);
            on_text(s);
        }
    };

    let mut logits = model.forward(prompt, &mut cache)?.pop().unwrap();
    let reason = loop {
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            break StopReason::Cancelled;
        }
        let tok = sampler.sample(&logits);
        if Some(tok) == eos {
            break StopReason::EndOfText;
        }
        tokens.push(tok);
        let piece = utf8.push(vocab.token_bytes(tok)?);
        let (ready, hit) = filter.push(&piece);
        emit(&ready, &mut text);
        if hit {
            break StopReason::StopSequence;
        }
        if stop.max_new_tokens.is_some_and(|m| tokens.len() >= m) {
            break StopReason::MaxTokens;
        }
        if cache.len() >= max_ctx {
            break StopReason::MaxContext;
        }
        logits = model.forward(&[tok], &mut cache)?.pop().unwrap();
    };
    if reason != StopReason::StopSequence {
        let tail = utf8.finish();
        let (ready, _) = filter.push(&tail);
        emit(&ready, &mut text);
        let rest = filter.finish();
        emit(&rest, &mut text);
    }
    Ok(GenerationResult {
        token_count: tokens.len(),
        tokens,
        text,
        stop_reason: reason,
    })
}
