//! Chat sessions over a loaded model.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::actions::{Action, ActionParser, ParseEvent};
use crate::adapter::{render_turn, Speaker};
use crate::error::{Error, Result};
use crate::modelfile::{read_model, LoadedModel};
use crate::tokenizer::{Vocab, BOT};
use crate::transformer::{generate, SamplerParams, StopReason, StopSpec, Transformer};

pub const DEFAULT_GENERATION_RESERVE: usize = 128;

/// A model ready for chat.
pub struct Engine {
    pub model: Transformer,
    pub vocab: Vocab,
}

impl Engine {
    pub fn new(loaded: LoadedModel) -> Result<Self> {
        Ok(Engine {
            model: Transformer::new(loaded.config, loaded.weights)?,
            vocab: loaded.vocab,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_model(path)?)
    }

    pub fn max_context(&self) -> usize {
        self.model.config().max_context
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatSettings {
    pub sampler: SamplerParams,
    /// Tokens kept free for the reply when trimming history, at most half
    /// the context.
    pub generation_reserve: usize,
    /// Defaults to the reserve.
    pub max_new_tokens: Option<usize>,
    /// Pause after each streamed text chunk, for demos of slow devices.
    pub token_delay_ms: u64,
}

impl Default for ChatSettings {
    fn default() -> Self {
        ChatSettings {
            sampler: SamplerParams::default(),
            generation_reserve: DEFAULT_GENERATION_RESERVE,
            max_new_tokens: None,
            token_delay_ms: 0,
        }
    }
}

/// One stored turn. `text` is what the user saw; `raw` is what the model
/// produced, tags included, and is what later prompts are built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub speaker: Speaker,
    pub text: String,
    pub raw: String,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub cancelled: bool,
    pub timestamp_ms: u64,
}

impl ChatTurn {
    fn human(text: &str) -> Self {
        ChatTurn {
            speaker: Speaker::Human,
            text: text.to_string(),
            raw: text.to_string(),
            actions: Vec::new(),
            cancelled: false,
            timestamp_ms: now_ms(),
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub text: String,
    pub actions: Vec<Action>,
    pub stop_reason: StopReason,
    pub token_count: usize,
    pub wall_time_ms: u64,
}

/// What a running turn reports, in order. `Done` or `Failed` comes last,
/// after the session has stopped being busy.
#[derive(Clone, Debug, PartialEq)]
pub enum ChatEvent {
    Parse(ParseEvent),
    Done(TurnResult),
    Failed(String),
}

/// Renders `turns` plus the `<bot>:` cue, dropping the oldest human/bot
/// pairs until the token count fits `budget`. The last turn is always kept.
/// Returns the prompt and how many leading turns were dropped.
pub fn render_prompt(turns: &[ChatTurn], vocab: &Vocab, budget: usize) -> (String, usize) {
    let render = |from: usize| {
        let mut s: String = turns[from..]
            .iter()
            .map(|t| render_turn(t.speaker, &t.raw))
            .collect();
        s.push_str(BOT);
        s.push(':');
        s
    };
    let mut from = 0;
    loop {
        let prompt = render(from);
        if from + 1 >= turns.len() || vocab.encode(&prompt).len() <= budget {
            return (prompt, from);
        }
        from += if turns.len() - from >= 2 { 2 } else { 1 };
        from = from.min(turns.len() - 1);
    }
}

struct State {
    turns: Vec<ChatTurn>,
}

struct Shared {
    engine: Arc<Engine>,
    settings: ChatSettings,
    state: Mutex<State>,
    busy: AtomicBool,
    cancel: AtomicBool,
    transcript: Option<PathBuf>,
}

/// Clears the busy flag on every exit path.
struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// A conversation with at most one generation in flight.
#[derive(Clone)]
pub struct ChatSession {
    shared: Arc<Shared>,
}

/// Completion of a submitted turn.
pub struct TurnHandle(JoinHandle<Result<TurnResult>>);

impl TurnHandle {
    pub fn wait(self) -> Result<TurnResult> {
        self.0
            .join()
            .unwrap_or_else(|_| Err(Error::InvalidInput("generation worker panicked".into())))
    }
}

impl ChatSession {
    pub fn new(engine: Arc<Engine>, settings: ChatSettings) -> Self {
        Self::build(engine, settings, Vec::new(), None)
    }

    /// Opens a session backed by a JSON-lines transcript, replaying any
    /// turns already in it.
    pub fn with_transcript(
        engine: Arc<Engine>,
        settings: ChatSettings,
        path: impl Into<PathBuf>,
    ) -> Result<Self> {
        let path = path.into();
        let turns = match fs::read_to_string(&path) {
            Ok(text) => load_transcript(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self::build(engine, settings, turns, Some(path)))
    }

    fn build(
        engine: Arc<Engine>,
        settings: ChatSettings,
        turns: Vec<ChatTurn>,
        transcript: Option<PathBuf>,
    ) -> Self {
        ChatSession {
            shared: Arc::new(Shared {
                engine,
                settings,
                state: Mutex::new(State { turns }),
                busy: AtomicBool::new(false),
                cancel: AtomicBool::new(false),
                transcript,
            }),
        }
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn settings(&self) -> &ChatSettings {
        &self.shared.settings
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.shared.engine
    }

    /// Reply headroom: the configured reserve, capped at half the context
    /// so small models still take a prompt.
    pub fn reserve(&self) -> usize {
        let ctx = self.shared.engine.max_context();
        self.shared.settings.generation_reserve.min(ctx / 2)
    }

    pub fn token_budget(&self) -> usize {
        self.shared.engine.max_context() - self.reserve()
    }

    pub fn turns(&self) -> Vec<ChatTurn> {
        self.state().turns.clone()
    }

    pub fn is_busy(&self) -> bool {
        self.shared.busy.load(Ordering::SeqCst)
    }

    /// The prompt the next `submit(prompt)` would feed the model.
    pub fn render_prompt(&self, prompt: &str) -> String {
        let mut turns = self.turns();
        turns.push(ChatTurn::human(prompt));
        render_prompt(&turns, &self.shared.engine.vocab, self.token_budget()).0
    }

    /// Starts a turn on a worker thread. Fails at once with `Busy` while
    /// another turn runs; the session is left untouched in that case.
    pub fn submit(
        &self,
        prompt: &str,
        mut on_event: impl FnMut(ChatEvent) + Send + 'static,
    ) -> Result<TurnHandle> {
        let prepared = self.begin(prompt)?;
        let me = self.clone();
        let handle = thread::spawn(move || {
            let out = me.run(prepared, &mut |e| on_event(ChatEvent::Parse(e)));
            match &out {
                Ok(r) => on_event(ChatEvent::Done(r.clone())),
                Err(e) => on_event(ChatEvent::Failed(e.to_string())),
            }
            out
        });
        Ok(TurnHandle(handle))
    }

    /// Runs a turn on the calling thread with the same busy contract.
    pub fn submit_blocking(
        &self,
        prompt: &str,
        on_event: &mut dyn FnMut(ParseEvent),
    ) -> Result<TurnResult> {
        let prepared = self.begin(prompt)?;
        self.run(prepared, on_event)
    }

    pub fn cancel(&self) -> Result<()> {
        if !self.is_busy() {
            return Err(Error::NotBusy);
        }
        self.shared.cancel.store(true, Ordering::SeqCst);
        Ok(())
    }

    /// Forgets the conversation. The transcript file is truncated too.
    pub fn reset(&self) -> Result<()> {
        if self.is_busy() {
            return Err(Error::Busy);
        }
        self.state().turns.clear();
        if let Some(p) = &self.shared.transcript {
            fs::write(p, "")?;
        }
        Ok(())
    }

    fn begin(&self, prompt: &str) -> Result<Prepared> {
        if prompt.trim().is_empty() {
            return Err(Error::InvalidInput("empty prompt".into()));
        }
        if self
            .shared
            .busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(Error::Busy);
        }
        let guard = BusyGuard(&self.shared.busy);
        self.shared.cancel.store(false, Ordering::SeqCst);
        let human = ChatTurn::human(prompt);
        let mut turns = self.turns();
        turns.push(human.clone());
        let budget = self.token_budget();
        let (text, _) = render_prompt(&turns, &self.shared.engine.vocab, budget);
        let tokens = self.shared.engine.vocab.encode(&text);
        if tokens.len() > budget {
            return Err(Error::ContextFull {
                needed: tokens.len(),
                capacity: budget,
            });
        }
        self.append(human)?;
        std::mem::forget(guard);
        Ok(Prepared { tokens })
    }

    fn run(&self, prepared: Prepared, on_event: &mut dyn FnMut(ParseEvent)) -> Result<TurnResult> {
        let _busy = BusyGuard(&self.shared.busy);
        let started = Instant::now();
        let engine = &self.shared.engine;
        let settings = &self.shared.settings;
        let stop = StopSpec {
            max_new_tokens: Some(settings.max_new_tokens.unwrap_or(self.reserve())),
            ..StopSpec::default()
        };
        let mut parser = ActionParser::new();
        let mut text = String::new();
        let mut actions = Vec::new();
        let mut route = |events: Vec<ParseEvent>, text: &mut String, actions: &mut Vec<Action>| {
            for e in events {
                match &e {
                    ParseEvent::Text { text: t } => text.push_str(t),
                    ParseEvent::Action { action } => actions.push(action.clone()),
                    ParseEvent::Warning { .. } => {}
                }
                on_event(e);
            }
        };
        let generated = generate(
            &engine.model,
            &engine.vocab,
            &prepared.tokens,
            &settings.sampler,
            &stop,
            Some(&self.shared.cancel),
            &mut |chunk| {
                route(parser.feed(chunk), &mut text, &mut actions);
                if settings.token_delay_ms > 0 {
                    thread::sleep(Duration::from_millis(settings.token_delay_ms));
                }
            },
        );
        let generated = match generated {
            Ok(g) => g,
            Err(e) => {
                self.rollback_human();
                return Err(e);
            }
        };
        route(parser.flush(), &mut text, &mut actions);
        let stop_reason = generated.stop_reason;
        self.append(ChatTurn {
            speaker: Speaker::Bot,
            text: text.clone(),
            raw: generated.text,
            actions: actions.clone(),
            cancelled: stop_reason == StopReason::Cancelled,
            timestamp_ms: now_ms(),
        })?;
        Ok(TurnResult {
            text,
            actions,
            stop_reason,
            token_count: generated.token_count,
            wall_time_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn append(&self, turn: ChatTurn) -> Result<()> {
        if let Some(p) = &self.shared.transcript {
            let mut line = serde_json::to_string(&turn)?;
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)?
                .write_all(line.as_bytes())?;
        }
        self.state().turns.push(turn);
        Ok(())
    }

    fn rollback_human(&self) {
        let mut st = self.state();
        if st.turns.last().is_some_and(|t| t.speaker == Speaker::Human) {
            st.turns.pop();
        }
        if let Some(p) = &self.shared.transcript {
            let text: String = st
                .turns
                .iter()
                .filter_map(|t| serde_json::to_string(t).ok())
                .map(|l| l + "\n")
                .collect();
            let _ = fs::write(p, text);
        }
    }
}

struct Prepared {
    tokens: Vec<crate::tokenizer::TokenId>,
}

pub fn load_transcript(text: &str) -> Result<Vec<ChatTurn>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidInput(format!("transcript line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(speaker: Speaker, text: &str) -> ChatTurn {
        ChatTurn {
            speaker,
            text: text.into(),
            raw: text.into(),
            actions: vec![],
            cancelled: false,
            timestamp_ms: 0,
        }
    }

    #[test]
    fn renders_template() {
        let v = Vocab::fixture(512).unwrap();
        let (p, dropped) = render_prompt(&[turn(Speaker::Human, "Hi")], &v, 100);
        assert_eq!(p, "<human>: Hi\n<bot>:");
        assert_eq!(dropped, 0);
        let turns = [
            turn(Speaker::Human, "Who is Elon Musk?"),
            turn(Speaker::Bot, "A businessman."),
            turn(Speaker::Human, "When was he born?"),
        ];
        let (p, _) = render_prompt(&turns, &v, 1000);
        assert_eq!(
            p,
            "<human>: Who is Elon Musk?\n<bot>: A businessman.\n<human>: When was he born?\n<bot>:"
        );
    }

    #[test]
    fn trims_oldest_pairs_first() {
        let v = Vocab::fixture(512).unwrap();
        let mut turns = Vec::new();
        for i in 0..10 {
            turns.push(turn(Speaker::Human, &format!("question number {i}")));
            turns.push(turn(Speaker::Bot, &format!("answer number {i}")));
        }
        turns.push(turn(Speaker::Human, "last"));
        let full = v.encode(&render_prompt(&turns, &v, usize::MAX).0).len();
        for budget in [0, 5, 20, 40, full / 2, full] {
            let (p, dropped) = render_prompt(&turns, &v, budget);
            assert_eq!(dropped % 2, 0);
            assert!(p.starts_with("<human>: "));
            assert!(p.ends_with("<human>: last\n<bot>:"));
            if dropped < turns.len() - 1 {
                assert!(v.encode(&p).len() <= budget, "budget {budget}");
            }
        }
        assert_eq!(render_prompt(&turns, &v, full).1, 0);
    }
}
