//! Minimal threaded HTTP/1.1 file server with fault injection, for tests.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Advertise the full length but close after this many body bytes.
    Truncate(usize),
    /// Flip one byte in the middle of the body.
    Corrupt,
    /// Answer every request with the full body and 200.
    IgnoreRange,
}

#[derive(Clone)]
struct Route {
    body: Arc<Vec<u8>>,
    fault: Fault,
}

pub struct TestServer {
    addr: SocketAddr,
    routes: Arc<Mutex<HashMap<String, Route>>>,
    requests: Arc<AtomicUsize>,
    ranges: Arc<Mutex<Vec<Option<u64>>>>,
}

impl TestServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().unwrap();
        let routes: Arc<Mutex<HashMap<String, Route>>> = Default::default();
        let requests = Arc::new(AtomicUsize::new(0));
        let ranges: Arc<Mutex<Vec<Option<u64>>>> = Default::default();
        let (r, q, g) = (routes.clone(), requests.clone(), ranges.clone());
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (r, q, g) = (r.clone(), q.clone(), g.clone());
                thread::spawn(move || {
                    let _ = serve(stream, &r, &q, &g);
                });
            }
        });
        TestServer {
            addr,
            routes,
            requests,
            ranges,
        }
    }

    pub fn put(&self, path: &str, body: Vec<u8>, fault: Fault) {
        self.routes.lock().unwrap().insert(
            path.to_string(),
            Route {
                body: Arc::new(body),
                fault,
            },
        );
    }

    pub fn set_fault(&self, path: &str, fault: Fault) {
        if let Some(r) = self.routes.lock().unwrap().get_mut(path) {
            r.fault = fault;
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Range start of every request so far (`None` for plain GETs).
    pub fn range_starts(&self) -> Vec<Option<u64>> {
        self.ranges.lock().unwrap().clone()
    }
}

fn serve(
    stream: TcpStream,
    routes: &Mutex<HashMap<String, Route>>,
    requests: &AtomicUsize,
    ranges: &Mutex<Vec<Option<u64>>>,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut range = None;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" {
            break;
        }
        let lower = h.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("range: bytes=") {
            range = v.trim().trim_end_matches('-').parse::<u64>().ok();
        }
    }
    requests.fetch_add(1, Ordering::SeqCst);
    ranges.lock().unwrap().push(range);
    let route = routes.lock().unwrap().get(&path).cloned();
    let mut out = stream;
    let Some(route) = route else {
        out.write_all(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")?;
        return Ok(());
    };
    let mut body = route.body.as_ref().clone();
    if route.fault == Fault::Corrupt && !body.is_empty() {
        let mid = body.len() / 2;
        body[mid] ^= 0x5a;
    }
    let start = match (range, route.fault) {
        (Some(s), f) if f != Fault::IgnoreRange && (s as usize) <= body.len() => s as usize,
        _ => 0,
    };
    let slice = &body[start..];
    let head = if start > 0 {
        format!(
            "HTTP/1.1 206 Partial Content\r\nContent-Length: {}\r\nContent-Range: bytes {}-{}/{}\r\nConnection: close\r\n\r\n",
            slice.len(),
            start,
            body.len() - 1,
            body.len()
        )
    } else {
        format!(
            "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            slice.len()
        )
    };
    out.write_all(head.as_bytes())?;
    match route.fault {
        Fault::Truncate(n) => out.write_all(&slice[..n.min(slice.len())])?,
        _ => out.write_all(slice)?,
    }
    out.flush()
}
