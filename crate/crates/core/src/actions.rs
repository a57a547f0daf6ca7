//! Streaming text-to-actions parser.
//!
//! Generated text may contain `<call>…<call>`, `<search>…<search>` and
//! `<calendar>when/title<calendar>` spans. [`ActionParser::feed`] takes text
//! in arbitrary chunks, passes ordinary text straight through, and withholds
//! tag payloads until a closing tag turns them into an [`Action`].

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{CALENDAR, CALL, SEARCH};

pub const DEFAULT_PAYLOAD_CAP: usize = 512;
pub const CALENDAR_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const TAGS: [(&str, ActionKind); 3] = [
    (CALL, ActionKind::Call),
    (SEARCH, ActionKind::Search),
    (CALENDAR, ActionKind::Calendar),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Call,
    Search,
    Calendar,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Call => "call",
            ActionKind::Search => "search",
            ActionKind::Calendar => "calendar",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ActionKind::Call => CALL,
            ActionKind::Search => SEARCH,
            ActionKind::Calendar => CALENDAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "fields", rename_all = "lowercase")]
pub enum ActionData {
    Call { contact: String },
    Search { query: String },
    Calendar { when: NaiveDateTime, title: String },
}

impl ActionData {
    pub fn kind(&self) -> ActionKind {
        match self {
            ActionData::Call { .. } => ActionKind::Call,
            ActionData::Search { .. } => ActionKind::Search,
            ActionData::Calendar { .. } => ActionKind::Calendar,
        }
    }
}

/// A completed action. Serializes as
/// `{"kind", "fields", "mismatched_close", "raw_span"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    #[serde(flatten)]
    pub data: ActionData,
    /// Name of the closing tag when it differs from the opener.
    pub mismatched_close: Option<ActionKind>,
    /// The exact text the action was parsed from, tags included.
    pub raw_span: String,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        self.data.kind()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningReason {
    MismatchedClose,
    PayloadOverflow,
    Unterminated,
    EmptyPayload,
    MalformedCalendar,
    BadDateTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParseEvent {
    Text { text: String },
    Action { action: Action },
    Warning { reason: WarningReason, raw_span: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Mode {
    Outside,
    Inside { opener: ActionKind, payload: String },
}

/// Incremental parser state. One instance per generated reply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionParser {
    mode: Mode,
    /// Possible tag prefix starting with '<'.
    maybe: String,
    cap: usize,
    payload_chars: usize,
}

impl Default for ActionParser {
    fn default() -> Self {
        Self::new()
    }
}

fn is_tag_prefix(s: &str) -> bool {
    TAGS.iter().any(|(t, _)| t.starts_with(s))
}

fn tag_kind(s: &str) -> Option<ActionKind> {
    TAGS.iter().find(|(t, _)| *t == s).map(|&(_, k)| k)
}

impl ActionParser {
    pub fn new() -> Self {
        Self::with_cap(DEFAULT_PAYLOAD_CAP)
    }

    /// `cap` bounds the payload, in chars, held while waiting for a closer.
    pub fn with_cap(cap: usize) -> Self {
        ActionParser {
            mode: Mode::Outside,
            maybe: String::new(),
            cap,
            payload_chars: 0,
        }
    }

    pub fn is_inside(&self) -> bool {
        matches!(self.mode, Mode::Inside { .. })
    }

    /// Bytes currently withheld from the text stream.
    pub fn pending(&self) -> usize {
        let held = match &self.mode {
            Mode::Outside => 0,
            Mode::Inside { opener, payload } => opener.tag().len() + payload.len(),
        };
        held + self.maybe.len()
    }

    pub fn feed(&mut self, chunk: &str) -> Vec<ParseEvent> {
        let mut out = Vec::new();
        let mut text = String::new();
        for c in chunk.chars() {
            self.push_char(c, &mut text, &mut out);
        }
        emit_text(&mut out, &mut text);
        out
    }

    /// Ends the stream: a half-seen tag becomes text, an unclosed action
    /// becomes a warning followed by its raw text.
    pub fn flush(&mut self) -> Vec<ParseEvent> {
        let mut out = Vec::new();
        let maybe = std::mem::take(&mut self.maybe);
        match std::mem::replace(&mut self.mode, Mode::Outside) {
            Mode::Outside => {
                if !maybe.is_empty() {
                    out.push(ParseEvent::Text { text: maybe });
                }
            }
            Mode::Inside { opener, payload } => {
                let raw = format!("{}{payload}{maybe}", opener.tag());
                out.push(ParseEvent::Warning {
                    reason: WarningReason::Unterminated,
                    raw_span: raw.clone(),
                });
                out.push(ParseEvent::Text { text: raw });
            }
        }
        self.payload_chars = 0;
        out
    }

    fn push_char(&mut self, c: char, text: &mut String, out: &mut Vec<ParseEvent>) {
        if !self.maybe.is_empty() {
            self.maybe.push(c);
            if let Some(kind) = tag_kind(&self.maybe) {
                self.maybe.clear();
                self.on_tag(kind, text, out);
                return;
            }
            if is_tag_prefix(&self.maybe) {
                return;
            }
            // not a tag after all; the last char is reconsidered on its own
            self.maybe.pop();
            let held = std::mem::take(&mut self.maybe);
            for h in held.chars() {
                self.plain_char(h, text, out);
            }
        }
        if c == '<' {
            self.maybe.push(c);
        } else {
            self.plain_char(c, text, out);
        }
    }

    fn plain_char(&mut self, c: char, text: &mut String, out: &mut Vec<ParseEvent>) {
        match &mut self.mode {
            Mode::Outside => text.push(c),
            Mode::Inside { opener, payload } => {
                payload.push(c);
                self.payload_chars += 1;
                if self.payload_chars > self.cap {
                    let raw = format!("{}{payload}", opener.tag());
                    self.mode = Mode::Outside;
                    self.payload_chars = 0;
                    emit_text(out, text);
                    out.push(ParseEvent::Warning {
                        reason: WarningReason::PayloadOverflow,
                        raw_span: raw.clone(),
                    });
                    text.push_str(&raw);
                }
            }
        }
    }

    fn on_tag(&mut self, kind: ActionKind, text: &mut String, out: &mut Vec<ParseEvent>) {
        match std::mem::replace(&mut self.mode, Mode::Outside) {
            Mode::Outside => {
                self.mode = Mode::Inside {
                    opener: kind,
                    payload: String::new(),
                };
                self.payload_chars = 0;
            }
            Mode::Inside { opener, payload } => {
                self.payload_chars = 0;
                emit_text(out, text);
                let raw = format!("{}{payload}{}", opener.tag(), kind.tag());
                let mismatched_close = (kind != opener).then_some(kind);
                match build_action(opener, &payload) {
                    Ok(data) => {
                        out.push(ParseEvent::Action {
                            action: Action {
                                data,
                                mismatched_close,
                                raw_span: raw.clone(),
                            },
                        });
                        if mismatched_close.is_some() {
                            out.push(ParseEvent::Warning {
                                reason: WarningReason::MismatchedClose,
                                raw_span: raw,
                            });
                        }
                    }
                    Err(reason) => {
                        out.push(ParseEvent::Warning {
                            reason,
                            raw_span: raw.clone(),
                        });
                        text.push_str(&raw);
                    }
                }
            }
        }
    }
}

fn emit_text(out: &mut Vec<ParseEvent>, text: &mut String) {
    if !text.is_empty() {
        out.push(ParseEvent::Text {
            text: std::mem::take(text),
        });
    }
}

fn build_action(kind: ActionKind, payload: &str) -> std::result::Result<ActionData, WarningReason> {
    let trimmed = payload.trim();
    if trimmed.is_empty() {
        return Err(WarningReason::EmptyPayload);
    }
    match kind {
        ActionKind::Call => Ok(ActionData::Call {
            contact: trimmed.to_string(),
        }),
        ActionKind::Search => Ok(ActionData::Search {
            query: trimmed.to_string(),
        }),
        ActionKind::Calendar => match parse_calendar_payload(payload) {
            Ok((when, title)) if !title.is_empty() => Ok(ActionData::Calendar { when, title }),
            Ok(_) => Err(WarningReason::EmptyPayload),
            Err(Error::MalformedCalendar) => Err(WarningReason::MalformedCalendar),
            Err(_) => Err(WarningReason::BadDateTime),
        },
    }
}

/// Splits `when/title` at the first '/'.
pub fn parse_calendar_payload(payload: &str) -> Result<(NaiveDateTime, String)> {
    let (when, title) = payload.split_once('/').ok_or(Error::MalformedCalendar)?;
    let when = NaiveDateTime::parse_from_str(when.trim(), CALENDAR_FORMAT)
        .map_err(|e| Error::BadDateTime(format!("{when:?}: {e}")))?;
    Ok((when, title.trim().to_string()))
}

/// Parses a complete string in one go, with adjacent text merged.
pub fn parse_all(text: &str) -> Vec<ParseEvent> {
    let mut p = ActionParser::new();
    let mut events = p.feed(text);
    events.extend(p.flush());
    coalesce(events)
}

/// Merges adjacent text events, giving the chunking-independent form of a
/// stream.
pub fn coalesce(events: impl IntoIterator<Item = ParseEvent>) -> Vec<ParseEvent> {
    let mut out: Vec<ParseEvent> = Vec::new();
    for e in events {
        if let (ParseEvent::Text { text }, Some(ParseEvent::Text { text: prev })) = (&e, out.last_mut()) {
            prev.push_str(text);
            continue;
        }
        out.push(e);
    }
    out
}

/// Rebuilds the input from text deltas and action spans.
pub fn reconstruct(events: &[ParseEvent]) -> String {
    events
        .iter()
        .map(|e| match e {
            ParseEvent::Text { text } => text.as_str(),
            ParseEvent::Action { action } => action.raw_span.as_str(),
            ParseEvent::Warning { .. } => "",
        })
        .collect()
}
