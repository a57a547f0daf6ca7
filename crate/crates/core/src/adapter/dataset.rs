//! Dialogue samples, the training template, padding and splitting.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, BOT, END_OF_TEXT, HUMAN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Bot,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Human => HUMAN,
            Speaker::Bot => BOT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub turns: Vec<Turn>,
}

impl DialogueSample {
    pub fn new(turns: &[(Speaker, &str)]) -> Result<Self> {
        let s = DialogueSample {
            turns: turns
                .iter()
                .map(|&(speaker, text)| Turn {
                    speaker,
                    text: text.to_string(),
                })
                .collect(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Nonempty, alternating, human first.
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::InvalidInput("dialogue has no turns".into()));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let want = if i % 2 == 0 { Speaker::Human } else { Speaker::Bot };
            if t.speaker != want {
                return Err(Error::InvalidInput(format!(
                    "turn {i} is {:?}, expected {want:?}",
                    t.speaker
                )));
            }
        }
        Ok(())
    }
}

/// `"<human>: {text}\n"` or `"<bot>: {text}\n"`.
pub fn render_turn(speaker: Speaker, text: &str) -> String {
    format!("{}: {text}\n", speaker.tag())
}

pub fn render_dialogue(sample: &DialogueSample) -> String {
    let mut out: String = sample
        .turns
        .iter()
        .map(|t| render_turn(t.speaker, &t.text))
        .collect();
    out.push_str(END_OF_TEXT);
    out
}

/// Parses one sample per nonempty line.
pub fn read_jsonl(text: &str) -> Result<Vec<DialogueSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: DialogueSample = serde_json::from_str(line)
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
        s.validate()
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, samples: &[DialogueSample]) -> Result<()> {
    let mut text = String::new();
    for s in samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Equal-length rows padded at the tail.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub rows: Vec<Vec<TokenId>>,
    pub lengths: Vec<usize>,
    pub pad_id: TokenId,
}

/// Pads every sequence with `pad_id` to the longest length in the batch.
pub fn pad_batch(samples: &[Vec<TokenId>], pad_id: TokenId) -> PaddedBatch {
    let width = samples.iter().map(Vec::len).max().unwrap_or(0);
    PaddedBatch {
        rows: samples
            .iter()
            .map(|s| {
                let mut row = s.clone();
                row.resize(width, pad_id);
                row
            })
            .collect(),
        lengths: samples.iter().map(Vec::len).collect(),
        pad_id,
    }
}

/// Seeded shuffle, then the first `round(fraction * n)` items train.
/// The cut is kept inside `1..n` so neither side is empty.
pub fn split_dataset<T: Clone>(samples: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidValue(format!(
            "train fraction {train_fraction} must be in (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocab;

    #[test]
    fn template() {
        let s = DialogueSample::new(&[(Speaker::Human, "Hi"), (Speaker::Bot, "Hello!")]).unwrap();
        assert_eq!(render_dialogue(&s), "<human>: Hi\n<bot>: Hello!\n<|endoftext|>");
        let s = DialogueSample::new(&[(Speaker::Human, ""), (Speaker::Bot, "ok")]).unwrap();
        assert_eq!(render_dialogue(&s), "<human>: \n<bot>: ok\n<|endoftext|>");
    }

    #[test]
    fn action_sample_roundtrips_with_atomic_tags() {
        let s = DialogueSample::new(&[(Speaker::Human, "Call John"), (Speaker::Bot, "<call>John<call>")])
            .unwrap();
        let text = render_dialogue(&s);
        let v = Vocab::fixture(512).unwrap();
        let ids = v.encode(&text);
        assert_eq!(v.decode(&ids).unwrap(), text);
        let call = v.special_id("<call>").unwrap();
        assert_eq!(ids.iter().filter(|&&i| i == call).count(), 2);
        assert_eq!(ids.last(), v.eos_id().as_ref());
    }

    #[test]
    fn validation() {
        assert!(DialogueSample::new(&[]).is_err());
        assert!(DialogueSample::new(&[(Speaker::Bot, "x")]).is_err());
        assert!(DialogueSample::new(&[(Speaker::Human, "a"), (Speaker::Human, "b")]).is_err());
    }

    #[test]
    fn jsonl() {
        let text = r#"{"turns":[{"speaker":"human","text":"Hi"},{"speaker":"bot","text":"Hello!"}]}

{"turns":[{"speaker":"human","text":"Call John"}]}
"#;
        let v = read_jsonl(text).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].turns[0].text, "Call John");
        let err = read_jsonl(r#"{"turns":[{"speaker":"bot","text":"x"}]}"#).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn padding() {
        let b = pad_batch(&[vec![1, 2, 3]], 261);
        assert_eq!(b.rows, vec![vec![1, 2, 3]]);
        let b = pad_batch(&[vec![1, 2, 3], vec![4, 5, 6, 7, 8]], 261);
        assert_eq!(b.rows[0], vec![1, 2, 3, 261, 261]);
        assert_eq!(b.lengths, vec![3, 5]);
    }

    #[test]
    fn split_sizes() {
        let v: Vec<u32> = (0..357).collect();
        let (tr, ev) = split_dataset(&v, 0.9, 42).unwrap();
        assert_eq!((tr.len(), ev.len()), (321, 36));
        let (a, b) = split_dataset(&[1, 2], 0.5, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(matches!(split_dataset(&[1], 0.5, 0), Err(Error::TooFewSamples(1))));
        assert!(split_dataset(&[1, 2], 1.0, 0).is_err());
    }
}
