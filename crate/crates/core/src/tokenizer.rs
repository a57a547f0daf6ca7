//! Byte-fallback tokenizer with atomic special tokens.
//!
//! Ids `0..256` are the raw bytes, so every input is encodable. Special
//! literals (`<human>`, `<bot>`, the three action tags and `<|endoftext|>`)
//! are matched first, longest literal wins, and always become a single id.
//! Optional multi-byte entries are matched greedily (longest first) on the
//! text between specials.
//!
//! Streaming note: `encode(a + b)` can only differ from
//! `encode(a) ++ encode(b)` within `max_token_len()` bytes of the seam, which
//! is why the actions parser keeps at most one tag literal of look-behind.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const HUMAN: &str = "<human>";
pub const BOT: &str = "<bot>";
pub const CALL: &str = "<call>";
pub const SEARCH: &str = "<search>";
pub const CALENDAR: &str = "<calendar>";
pub const END_OF_TEXT: &str = "<|endoftext|>";

/// Special literals in id order for the fixture vocabulary.
pub const SPECIALS: [&str; 6] = [HUMAN, BOT, CALL, SEARCH, CALENDAR, END_OF_TEXT];

const VOCAB_HEADER: &str = "stlm-vocab 1";

/// Multi-byte pieces appended after the specials in the fixture vocabulary.
/// The tail of the list covers the demo dialogue (actions, dates).
const FIXTURE_PIECES: &[&str] = &[
    "Hello", "Hi", "Call", "call", "John", " John", " Castro", "Search", "search", "Highest",
    " building", " in", " the", " world", "Schedule", "schedule", " schedule", " search", " call", " meeting", "Meeting", "2023",
    "-05", "-20", "T09", ":00", "Sure", "OK", " for", " a", " me", " my", " you", " is", " to",
    " and", " of", " on", " at", " with", " what", " What", "What", " who", "Who", " when",
    "When", " where", " how", "How", " was", " he", " she", " born", " Elon", " Musk", "The",
    " I", " can", " will", " be", " are", " do", " this", " that", " it", "It", " not",
    " have", " has", " from", " by", " an", " or", " as", " please", "Please", " tomorrow",
    " today", " time", " day", " morning", " evening", " phone", " number", " weather", " news",
    " find", " open", " set", " up", " reminder", " event", " calendar", " web", " tallest",
    " highest", " mountain", " city", " country", " name", " thank", " thanks", "Thanks",
    " help", " assistant", " question", " answer", " information", " about", " more", " some",
    " any", " all", " one", " two", " three", " year", " years", " old", " new", " good",
    " great", " bye", "Bye", " yes", " no", "Yes", "No", " here", " there", " now", " then",
    " right", " sorry", " know", " think", " like", " want", " need", " get", " go", " make",
    " made", " take", " see", " look", " ask", " tell", " said", " say", " let", " out",
    " into", " over", " after", " before", " next", " last", " first", " may", " should",
    " would", " could", " his", " her", " their", " they", " we", " us", " our", " your",
    "ing", "ed", "er", "es", "ly", "tion", "ent", "al", "an", "on", "in", "re", "st", "th",
    "ou", "or", "ar", "le", "it", "is", "at", "en", "nd", "he", "te", "to", "ve", " p", " m", " d", " b", " f", " w", " h", " t", " n", " l", " r", " g", " e", " o", " u",
    "00", "01", "02", "03", "04", "05", "06", "07", "08", "09", "10", "11", "12", "15", "20",
    "30", "45", "2024", "2025", ". ", ", ", "? ", "! ", "\n\n", "  ", "...", "'s", "'m", "n't",
    "Monday", "Friday", " Ana", " Maria", " Mom", " Dad", " doctor", " dentist", " lunch",
    " dinner", " review", " Q1", " report",
];

/// Token table plus the ordered specials list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Vec<u8>>,
    specials: Vec<(String, TokenId)>,
    /// Multi-byte ordinary entries.
    pieces: HashMap<Vec<u8>, TokenId>,
    max_piece_len: usize,
    /// Specials sorted longest literal first.
    specials_by_len: Vec<(Vec<u8>, TokenId)>,
}

impl Vocab {
    /// Builds a vocabulary from an id-indexed table. Ids listed in `specials`
    /// are special; the first 256 entries must be the single bytes 0..=255.
    pub fn new(tokens: Vec<Vec<u8>>, special_ids: &[TokenId]) -> Result<Self> {
        if tokens.len() < 256 {
            return Err(Error::Format(format!(
                "vocab needs at least the 256 byte tokens, got {}",
                tokens.len()
            )));
        }
        for (b, tok) in tokens.iter().take(256).enumerate() {
            if tok.as_slice() != [b as u8] {
                return Err(Error::Format(format!("id {b} must be the single byte {b:#04x}")));
            }
        }
        let mut specials = Vec::new();
        for &id in special_ids {
            let tok = tokens
                .get(id as usize)
                .ok_or(Error::InvalidToken(id))?;
            if id < 256 {
                return Err(Error::Format(format!("byte id {id} cannot be special")));
            }
            let lit = String::from_utf8(tok.clone())
                .map_err(|_| Error::Format(format!("special id {id} is not UTF-8")))?;
            if specials.iter().any(|(l, _)| *l == lit) {
                return Err(Error::Format(format!("duplicate special `{lit}`")));
            }
            specials.push((lit, id));
        }
        let special_starts: Vec<u8> = specials.iter().map(|(l, _)| l.as_bytes()[0]).collect();

        let mut pieces = HashMap::new();
        let mut max_piece_len = 1;
        for (id, tok) in tokens.iter().enumerate().skip(256) {
            if special_ids.contains(&(id as TokenId)) {
                continue;
            }
            if tok.len() < 2 {
                return Err(Error::Format(format!("ordinary id {id} must be multi-byte")));
            }
            if tok.iter().any(|b| special_starts.contains(b)) {
                return Err(Error::Format(format!(
                    "ordinary id {id} contains the first byte of a special literal"
                )));
            }
            if pieces.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate entry for id {id}")));
            }
            max_piece_len = max_piece_len.max(tok.len());
        }
        let mut specials_by_len: Vec<(Vec<u8>, TokenId)> = specials
            .iter()
            .map(|(l, id)| (l.as_bytes().to_vec(), *id))
            .collect();
        specials_by_len.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Ok(Vocab {
            tokens,
            specials,
            pieces,
            max_piece_len,
            specials_by_len,
        })
    }

    /// Deterministic fixture vocabulary: 256 bytes, the six specials, then
    /// built-in multi-byte pieces until `size` entries exist.
    pub fn fixture(size: usize) -> Result<Self> {
        let base = 256 + SPECIALS.len();
        if size < base || size > base + FIXTURE_PIECES.len() {
            return Err(Error::InvalidInput(format!(
                "fixture vocab size must be in {base}..={}, got {size}",
                base + FIXTURE_PIECES.len()
            )));
        }
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.extend(SPECIALS.iter().map(|s| s.as_bytes().to_vec()));
        tokens.extend(
            FIXTURE_PIECES
                .iter()
                .take(size - base)
                .map(|p| p.as_bytes().to_vec()),
        );
        let special_ids: Vec<TokenId> = (256..base as TokenId).collect();
        Vocab::new(tokens, &special_ids)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> &[(String, TokenId)] {
        &self.specials
    }

    pub fn special_id(&self, literal: &str) -> Option<TokenId> {
        self.specials
            .iter()
            .find(|(l, _)| l == literal)
            .map(|(_, id)| *id)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.iter().any(|(_, s)| *s == id)
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.special_id(END_OF_TEXT)
    }

    pub fn token_bytes(&self, id: TokenId) -> Result<&[u8]> {
        self.tokens
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidToken(id))
    }

    /// Longest entry in bytes.
    pub fn max_token_len(&self) -> usize {
        self.tokens.iter().map(Vec::len).max().unwrap_or(1)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < bytes.len() {
            let rest = &bytes[i..];
            for (lit, id) in &self.specials_by_len {
                if rest.starts_with(lit) {
                    out.push(*id);
                    i += lit.len();
                    continue 'outer;
                }
            }
            let longest = self.max_piece_len.min(rest.len());
            for len in (2..=longest).rev() {
                if let Some(&id) = self.pieces.get(&rest[..len]) {
                    out.push(id);
                    i += len;
                    continue 'outer;
                }
            }
            out.push(bytes[i] as TokenId);
            i += 1;
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id)?);
        }
        Ok(out)
    }

    /// Concatenated token text. Invalid UTF-8 (possible for sampled byte
    /// tokens) is replaced with U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Serializes to the line-oriented vocab file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(VOCAB_HEADER);
        out.push('\n');
        for (id, tok) in self.tokens.iter().enumerate() {
            let flag = if self.is_special(id as TokenId) { "S" } else { "-" };
            let mut hex = String::with_capacity(tok.len() * 2);
            for b in tok {
                let _ = write!(hex, "{b:02x}");
            }
            let _ = writeln!(out, "{id}\t{hex}\t{flag}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == VOCAB_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "vocab header must be `{VOCAB_HEADER}`, got {other:?}"
                )))
            }
        }
        let mut tokens = Vec::new();
        let mut special_ids = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("vocab line {}: `{line}`", n + 2));
            let mut fields = line.split('\t');
            let (Some(id), Some(hex), Some(flag), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            let id: usize = id.parse().map_err(|_| bad())?;
            if id != tokens.len() {
                return Err(bad());
            }
            if hex.is_empty() || hex.len() % 2 != 0 {
                return Err(bad());
            }
            let bytes = (0..hex.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
                .collect::<std::result::Result<Vec<u8>, _>>()
                .map_err(|_| bad())?;
            match flag {
                "S" => special_ids.push(id as TokenId),
                "-" => {}
                _ => return Err(bad()),
            }
            tokens.push(bytes);
        }
        Vocab::new(tokens, &special_ids)
    }
}

/// Incremental UTF-8 assembly for token-by-token decoding. Incomplete
/// trailing sequences are held back until the next push.
#[derive(Default, Debug)]
pub struct Utf8Stream {
    pending: Vec<u8>,
}

impl Utf8Stream {
    pub fn push(&mut self, bytes: &[u8]) -> String {
        self.pending.extend_from_slice(bytes);
        let mut out = String::new();
        loop {
            match std::str::from_utf8(&self.pending) {
                Ok(s) => {
                    out.push_str(s);
                    self.pending.clear();
                    return out;
                }
                Err(e) => {
                    let valid = e.valid_up_to();
                    out.push_str(std::str::from_utf8(&self.pending[..valid]).unwrap());
                    match e.error_len() {
                        Some(bad) => {
                            out.push('\u{fffd}');
                            self.pending.drain(..valid + bad);
                        }
                        None => {
                            self.pending.drain(..valid);
                            return out;
                        }
                    }
                }
            }
        }
    }

    /// Emits whatever is left, replacing an incomplete tail with U+FFFD.
    pub fn finish(&mut self) -> String {
        let out = String::from_utf8_lossy(&self.pending).into_owned();
        self.pending.clear();
        out
    }
}
