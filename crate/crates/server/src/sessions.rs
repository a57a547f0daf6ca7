//! Chat sessions and their replayable event logs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use stlm_core::actions::ParseEvent;
use stlm_core::chat::{ChatEvent, ChatSession, ChatSettings, Engine};
use tokio::sync::broadcast;

/// One server-sent event as stored in a session log.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamEvent {
    pub id: u64,
    pub name: &'static str,
    pub data: Value,
}

impl StreamEvent {
    fn from_chat(id: u64, e: ChatEvent) -> Self {
        let (name, data) = match e {
            ChatEvent::Parse(ParseEvent::Text { text }) => ("token", json!({ "text": text })),
            ChatEvent::Parse(ParseEvent::Action { action }) => ("action", json!(action)),
            ChatEvent::Parse(ParseEvent::Warning { reason, raw_span }) => {
                ("warning", json!({ "reason": reason, "raw_span": raw_span }))
            }
            ChatEvent::Done(r) => ("done", json!(r)),
            ChatEvent::Failed(message) => ("done", json!({ "error": message })),
        };
        StreamEvent { id, name, data }
    }
}

struct Log {
    events: Vec<StreamEvent>,
    tx: broadcast::Sender<StreamEvent>,
}

pub struct SessionEntry {
    pub session: ChatSession,
    log: Mutex<Log>,
}

impl SessionEntry {
    fn new(session: ChatSession) -> Arc<Self> {
        let (tx, _) = broadcast::channel(4096);
        Arc::new(SessionEntry {
            session,
            log: Mutex::new(Log {
                events: Vec::new(),
                tx,
            }),
        })
    }

    /// Appends an event and wakes live subscribers.
    pub fn publish(&self, e: ChatEvent) {
        let mut log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        let ev = StreamEvent::from_chat(log.events.len() as u64 + 1, e);
        log.events.push(ev.clone());
        let _ = log.tx.send(ev);
    }

    /// Events after `last_id`, plus a receiver for everything that follows.
    pub fn subscribe(&self, last_id: u64) -> (Vec<StreamEvent>, broadcast::Receiver<StreamEvent>) {
        let log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        let backlog = log
            .events
            .iter()
            .filter(|e| e.id > last_id)
            .cloned()
            .collect();
        (backlog, log.tx.subscribe())
    }
}

pub struct Sessions {
    dir: Option<PathBuf>,
    settings: ChatSettings,
    map: Mutex<HashMap<String, Arc<SessionEntry>>>,
    counter: AtomicU64,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Sessions {
    /// `dir` holds one JSON-lines transcript per session.
    pub fn new(dir: Option<PathBuf>, settings: ChatSettings) -> Self {
        Sessions {
            dir,
            settings,
            map: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    pub fn new_id(&self) -> String {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        format!("s{nanos:x}{:x}", self.counter.fetch_add(1, Ordering::Relaxed))
    }

    /// Live session, or one restored from its transcript file.
    pub fn get(&self, id: &str, engine: Option<&Arc<Engine>>) -> Option<Arc<SessionEntry>> {
        let mut map = self.map.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(e) = map.get(id) {
            return Some(e.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{id}.jsonl"));
        if !valid_id(id) || !path.exists() {
            return None;
        }
        let session = ChatSession::with_transcript(engine?.clone(), self.settings.clone(), path).ok()?;
        let entry = SessionEntry::new(session);
        map.insert(id.to_string(), entry.clone());
        Some(entry)
    }

    pub fn create(&self, id: &str, engine: Arc<Engine>) -> stlm_core::Result<Arc<SessionEntry>> {
        let mut map = self.map.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(e) = map.get(id) {
            return Ok(e.clone());
        }
        let session = match &self.dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                ChatSession::with_transcript(
                    engine,
                    self.settings.clone(),
                    dir.join(format!("{id}.jsonl")),
                )?
            }
            None => ChatSession::new(engine, self.settings.clone()),
        };
        let entry = SessionEntry::new(session);
        map.insert(id.to_string(), entry.clone());
        Ok(entry)
    }
}
