#[path = "../../core/tests/support/http.rs"]
mod http;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use futures::StreamExt;
use http::{Fault, TestServer};
use serde_json::{json, Value};
use stlm_core::chat::ChatSettings;
use stlm_core::fixture::demo_model;
use stlm_core::modelfile::{md5_hex, quantize_weights, write_model, ModelManifest};
use stlm_server::{spawn, ModelSource, ServerConfig};

fn write_demo(dir: &Path) -> PathBuf {
    let m = demo_model().unwrap();
    let q = quantize_weights(&m.weights).unwrap();
    let path = dir.join("demo-q4.stlm");
    write_model(&path, &m.config, &q, Some(&m.vocab)).unwrap();
    path
}

async fn start(source: ModelSource, data: &Path, chat: ChatSettings, heartbeat: Duration) -> String {
    let config = ServerConfig {
        source,
        data_dir: data.to_path_buf(),
        heartbeat,
        chat,
    };
    let (addr, _, _) = spawn(config, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    format!("http://{addr}")
}

async fn wait_for_state(base: &str, want: &str) -> Vec<Value> {
    let client = reqwest::Client::new();
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut seen = Vec::new();
    loop {
        let s: Value = client
            .get(format!("{base}/api/model/status"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let state = s["state"].as_str().unwrap().to_string();
        if seen.last() != Some(&s) {
            seen.push(s);
        }
        if state == want || state == "error" || state == "ready" {
            return seen;
        }
        assert!(Instant::now() < deadline, "timed out waiting for {want}: {seen:?}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

/// Reads server-sent events until `stop` returns true for one of them.
struct SseReader {
    body: std::pin::Pin<Box<dyn futures::Stream<Item = reqwest::Result<axum::body::Bytes>> + Send>>,
    buf: String,
}

#[derive(Debug, Clone)]
struct Sse {
    id: Option<u64>,
    event: String,
    data: Value,
    comment: bool,
}

impl SseReader {
    async fn open(base: &str, session: &str, last_id: Option<u64>) -> reqwest::Response {
        let mut req = reqwest::Client::new().get(format!("{base}/api/chat/stream?session_id={session}"));
        if let Some(id) = last_id {
            req = req.header("Last-Event-ID", id.to_string());
        }
        req.send().await.unwrap()
    }

    fn new(resp: reqwest::Response) -> Self {
        SseReader {
            body: Box::pin(resp.bytes_stream()),
            buf: String::new(),
        }
    }

    async fn next(&mut self) -> Sse {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut ev = Sse { id: None, event: "message".into(), data: Value::Null, comment: false };
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        ev.event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    } else if let Some(v) = line.strip_prefix("id:") {
                        ev.id = v.trim().parse().ok();
                    } else if line.starts_with(':') {
                        ev.comment = true;
                    }
                }
                if !data.is_empty() {
                    ev.data = serde_json::from_str(&data).unwrap();
                }
                return ev;
            }
            let chunk = tokio::time::timeout(Duration::from_secs(30), self.body.next())
                .await
                .expect("stream stalled")
                .expect("stream ended")
                .unwrap();
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    async fn until_done(&mut self) -> Vec<Sse> {
        let mut out = Vec::new();
        loop {
            let e = self.next().await;
            if e.comment {
                continue;
            }
            let done = e.event == "done";
            out.push(e);
            if done {
                return out;
            }
        }
    }
}

async fn post(base: &str, path: &str, body: Value) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("{base}{path}"))
        .json(&body)
        .send()
        .await
        .unwrap();
    let code = r.status().as_u16();
    (code, r.json().await.unwrap_or(Value::Null))
}

#[tokio::test(flavor = "multi_thread")]
async fn manifest_download_to_ready_then_streamed_chat() {
    let files = tempfile::tempdir().unwrap();
    let model = std::fs::read(write_demo(files.path())).unwrap();
    let origin = TestServer::start();
    origin.put("/demo-q4.stlm", model.clone(), Fault::None);
    let manifest = ModelManifest {
        url: origin.url("/demo-q4.stlm"),
        bytes: model.len() as u64,
        md5: md5_hex(&model),
        name: "demo-q4.stlm".into(),
        version: 1,
    };
    origin.put("/manifest.json", manifest.to_json().into_bytes(), Fault::None);

    let data = tempfile::tempdir().unwrap();
    let base = start(
        ModelSource::Manifest { location: origin.url("/manifest.json"), dir: data.path().to_path_buf() },
        data.path(),
        ChatSettings::default(),
        Duration::from_secs(15),
    )
    .await;
    let seen = wait_for_state(&base, "ready").await;
    let order = ["absent", "downloading", "verifying", "loading", "ready"];
    let ranks: Vec<usize> = seen
        .iter()
        .map(|s| order.iter().position(|o| *o == s["state"]).unwrap_or_else(|| panic!("{seen:?}")))
        .collect();
    assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{seen:?}");
    assert_eq!(seen.last().unwrap()["name"], "demo-q4.stlm");

    let (code, created) = post(&base, "/api/sessions", json!({})).await;
    assert_eq!(code, 201);
    let sid = created["session_id"].as_str().unwrap().to_string();
    let mut stream = SseReader::new(SseReader::open(&base, &sid, None).await);

    let (code, accepted) = post(&base, "/api/chat", json!({"session_id": sid, "prompt": "Search the highest building"})).await;
    assert_eq!(code, 202, "{accepted}");
    let events = stream.until_done().await;
    let actions: Vec<_> = events.iter().filter(|e| e.event == "action").collect();
    assert_eq!(actions.len(), 1, "{events:?}");
    assert_eq!(actions[0].data["kind"], "search");
    assert_eq!(actions[0].data["fields"]["query"], "Highest building in the world");
    assert_eq!(events.last().unwrap().data["stop_reason"], "end_of_text");

    let (code, _) = post(&base, "/api/chat", json!({"session_id": sid, "prompt": "Hi"})).await;
    assert_eq!(code, 202);
    let events = stream.until_done().await;
    let tokens: String = events
        .iter()
        .filter(|e| e.event == "token")
        .map(|e| e.data["text"].as_str().unwrap())
        .collect();
    assert_eq!(tokens, "Hello");
    assert_eq!(events.last().unwrap().data["text"], "Hello");
    let last_id = events.last().unwrap().id.unwrap();

    // a reconnect replays only what came after the given id
    let (code, _) = post(&base, "/api/chat", json!({"session_id": sid, "prompt": "Call John"})).await;
    assert_eq!(code, 202);
    let mut again = SseReader::new(SseReader::open(&base, &sid, Some(last_id)).await);
    let events = again.until_done().await;
    assert!(events.iter().all(|e| e.id.unwrap() > last_id));
    assert_eq!(events.iter().filter(|e| e.event == "action").count(), 1);
    assert_eq!(events[0].data["kind"], "call");

    let hist: Value = reqwest::get(format!("{base}/api/chat/history?session_id={sid}"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(hist["turns"].as_array().unwrap().len(), 6);

    let missing = SseReader::open(&base, "nope", None).await;
    assert_eq!(missing.status().as_u16(), 404);
    // polling is side-effect free
    let a = wait_for_state(&base, "ready").await;
    let b = wait_for_state(&base, "ready").await;
    assert_eq!(a, b);
}

#[tokio::test(flavor = "multi_thread")]
async fn corrupted_download_reports_error() {
    let files = tempfile::tempdir().unwrap();
    let model = std::fs::read(write_demo(files.path())).unwrap();
    let origin = TestServer::start();
    origin.put("/m.stlm", model.clone(), Fault::Corrupt);
    let manifest = ModelManifest {
        url: origin.url("/m.stlm"),
        bytes: model.len() as u64,
        md5: md5_hex(&model),
        name: "m.stlm".into(),
        version: 1,
    };
    let mpath = files.path().join("manifest.json");
    std::fs::write(&mpath, manifest.to_json()).unwrap();
    let data = tempfile::tempdir().unwrap();
    let base = start(
        ModelSource::Manifest { location: mpath.display().to_string(), dir: data.path().join("models") },
        data.path(),
        ChatSettings::default(),
        Duration::from_secs(15),
    )
    .await;
    let seen = wait_for_state(&base, "error").await;
    let last = seen.last().unwrap();
    assert_eq!(last["state"], "error");
    assert!(last["message"].as_str().unwrap().contains("checksum"), "{last}");
    assert!(!data.path().join("models/m.stlm").exists());
    let (code, _) = post(&base, "/api/chat", json!({"prompt": "Hi"})).await;
    assert_eq!(code, 503);
}

#[tokio::test(flavor = "multi_thread")]
async fn chat_before_ready_is_503() {
    let data = tempfile::tempdir().unwrap();
    let base = start(ModelSource::None, data.path(), ChatSettings::default(), Duration::from_secs(15)).await;
    let s: Value = reqwest::get(format!("{base}/api/model/status")).await.unwrap().json().await.unwrap();
    assert_eq!(s, json!({"state": "absent"}));
    assert_eq!(post(&base, "/api/chat", json!({"prompt": "Hi"})).await.0, 503);
    assert_eq!(post(&base, "/api/sessions", json!({})).await.0, 503);
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_cancel_and_heartbeat() {
    let files = tempfile::tempdir().unwrap();
    let path = write_demo(files.path());
    let data = tempfile::tempdir().unwrap();
    let chat = ChatSettings { token_delay_ms: 1500, ..ChatSettings::default() };
    let base = start(ModelSource::File(path), data.path(), chat, Duration::from_millis(200)).await;
    wait_for_state(&base, "ready").await;

    let (_, created) = post(&base, "/api/sessions", json!({})).await;
    let sid = created["session_id"].as_str().unwrap().to_string();
    let mut stream = SseReader::new(SseReader::open(&base, &sid, None).await);
    let first = stream.next().await;
    assert!(first.comment, "idle stream sends a heartbeat comment first: {first:?}");

    assert_eq!(post(&base, "/api/chat/cancel", json!({"session_id": sid})).await.0, 409);
    assert_eq!(post(&base, "/api/chat", json!({"session_id": sid, "prompt": "Hi"})).await.0, 202);
    let (code, body) = post(&base, "/api/chat", json!({"session_id": sid, "prompt": "Call John"})).await;
    assert_eq!(code, 409, "{body}");
    assert_eq!(post(&base, "/api/chat/cancel", json!({"session_id": sid})).await.0, 200);
    let events = stream.until_done().await;
    assert_eq!(events.last().unwrap().data["stop_reason"], "cancelled");
    assert_eq!(post(&base, "/api/chat", json!({"session_id": sid, "prompt": "Hi"})).await.0, 202);
    assert_eq!(post(&base, "/api/chat", json!({"session_id": "bad id!", "prompt": "Hi"})).await.0, 400);
    assert_eq!(post(&base, "/api/chat", json!({"prompt": "Hi", "extra": 1})).await.0, 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn settings_validate_and_persist() {
    let data = tempfile::tempdir().unwrap();
    let base = start(ModelSource::None, data.path(), ChatSettings::default(), Duration::from_secs(15)).await;
    let (code, body) = post(&base, "/api/settings", json!({"username": "Ana", "colors": {"bot": "#112233"}})).await;
    assert_eq!(code, 200, "{body}");
    let got: Value = reqwest::get(format!("{base}/api/settings")).await.unwrap().json().await.unwrap();
    assert_eq!(got["username"], "Ana");
    assert_eq!(got["colors"]["bot"], "#112233");
    assert_eq!(post(&base, "/api/settings", json!({"theme": "dark"})).await.0, 400);
    assert_eq!(post(&base, "/api/settings", json!({"username": ""})).await.0, 400);
    let huge = "x".repeat(stlm_server::SETTINGS_BODY_LIMIT + 1);
    assert_eq!(post(&base, "/api/settings", json!({"avatar": huge})).await.0, 413);

    let restarted = start(ModelSource::None, data.path(), ChatSettings::default(), Duration::from_secs(15)).await;
    let got: Value = reqwest::get(format!("{restarted}/api/settings")).await.unwrap().json().await.unwrap();
    assert_eq!(got["username"], "Ana");
}
