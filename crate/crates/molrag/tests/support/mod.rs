//! Test helpers: a local chat-completions server that imitates a model, and
//! paths into the fixture directory.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use molrag_core::prompt::{estimate_tokens, prompt_digest};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_molrag"))
}

/// One canned HTTP reply.
#[derive(Debug, Clone)]
pub struct Canned {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<u64>,
}

impl Canned {
    pub fn text(content: &str) -> Canned {
        Canned {
            status: 200,
            body: json!({
                "id": "mock",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            })
            .to_string(),
            retry_after: None,
        }
    }

    pub fn error(status: u16, code: &str, message: &str) -> Canned {
        Canned {
            status,
            body: json!({"error": {"message": message, "type": code, "code": code}}).to_string(),
            retry_after: None,
        }
    }

    pub fn rate_limited(retry_after: u64) -> Canned {
        Canned {
            retry_after: Some(retry_after),
            ..Canned::error(429, "rate_limit_exceeded", "Rate limit reached, slow down")
        }
    }
}

/// How the server answers.
pub enum Behavior {
    /// Imitates a model that copies the output of the first in-prompt
    /// example, in a reply format chosen by the prompt digest. Some digests
    /// first get a 429 or an unusable reply, a few never get a usable one,
    /// and prompts over `context_limit` estimated tokens are refused.
    Copycat { context_limit: usize },
    /// Plays the list in order; the last entry repeats.
    Script(Vec<Canned>),
}

struct Shared {
    key: String,
    behavior: Behavior,
    requests: AtomicUsize,
    per_digest: Mutex<HashMap<String, usize>>,
    bodies: Mutex<Vec<String>>,
    auth_headers: Mutex<Vec<String>>,
    stop: AtomicBool,
}

pub struct MockLlm {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockLlm {
    pub fn start(key: &str, behavior: Behavior) -> MockLlm {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let shared = Arc::new(Shared {
            key: key.to_string(),
            behavior,
            requests: AtomicUsize::new(0),
            per_digest: Mutex::new(HashMap::new()),
            bodies: Mutex::new(Vec::new()),
            auth_headers: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = shared.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let s = s.clone();
                    std::thread::spawn(move || serve(stream, &s));
                }
            }
        });
        MockLlm {
            addr,
            shared,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<String> {
        self.shared.bodies.lock().unwrap().clone()
    }

    pub fn auth_headers(&self) -> Vec<String> {
        self.shared.auth_headers.lock().unwrap().clone()
    }
}

impl Drop for MockLlm {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<(HashMap<String, String>, String)> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    if line.is_empty() {
        return None;
    }
    let mut headers = HashMap::new();
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((headers, String::from_utf8_lossy(&body).into_owned()))
}

fn serve(mut stream: TcpStream, s: &Shared) {
    let Some((headers, body)) = read_request(&mut stream) else {
        return;
    };
    s.requests.fetch_add(1, Ordering::SeqCst);
    s.bodies.lock().unwrap().push(body.clone());
    let auth = headers.get("authorization").cloned().unwrap_or_default();
    s.auth_headers.lock().unwrap().push(auth.clone());
    let reply = if auth != format!("Bearer {}", s.key) {
        Canned::error(401, "invalid_api_key", "Incorrect API key provided")
    } else {
        respond(s, &body)
    };
    let reason = match reply.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        _ => "Error",
    };
    let mut head = format!(
        "HTTP/1.1 {} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    if let Some(r) = reply.retry_after {
        head.push_str(&format!("Retry-After: {r}\r\n"));
    }
    head.push_str("\r\n");
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.body.as_bytes());
    let _ = stream.flush();
}

fn respond(s: &Shared, body: &str) -> Canned {
    let req: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(_) => return Canned::error(400, "invalid_request_error", "body is not JSON"),
    };
    let message = |role: &str| -> String {
        req["messages"]
            .as_array()
            .into_iter()
            .flatten()
            .find(|m| m["role"] == role)
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
            .to_string()
    };
    let (system, user) = (message("system"), message("user"));
    let digest = prompt_digest(&system, &user);
    let call = {
        let mut seen = s.per_digest.lock().unwrap();
        let c = seen.entry(digest.clone()).or_insert(0);
        *c += 1;
        *c
    };
    match &s.behavior {
        Behavior::Script(steps) => {
            let i = (s.requests.load(Ordering::SeqCst) - 1).min(steps.len() - 1);
            steps[i].clone()
        }
        Behavior::Copycat { context_limit } => copycat(&system, &user, &digest, call, *context_limit),
    }
}

fn copycat(system: &str, user: &str, digest: &str, call: usize, context_limit: usize) -> Canned {
    if estimate_tokens(system) + estimate_tokens(user) > context_limit {
        return Canned::error(
            400,
            "context_length_exceeded",
            "This model's maximum context length is exceeded. Please reduce the length of the messages.",
        );
    }
    let h = u16::from_str_radix(&digest[..4], 16).unwrap();
    if h % 113 == 7 {
        return Canned::text("I'm sorry, I can't help with that request.");
    }
    if call == 1 && h.is_multiple_of(10) {
        return Canned::rate_limited(0);
    }
    if call == 1 && h % 10 == 1 {
        return Canned::text("Let me think about this molecule step by step before answering.");
    }
    let cap2mol = user.starts_with("Caption:");
    let label = if cap2mol { "Molecule 1: " } else { "Caption 1: " };
    let answer = system
        .lines()
        .find_map(|l| l.strip_prefix(label))
        .filter(|a| !a.contains("_MASK]"))
        .map(str::to_string);
    let answer = match (answer, cap2mol) {
        (Some(a), _) => a,
        (None, true) => "CC(=O)O".to_string(),
        (None, false) => "The molecule is an organic compound.".to_string(),
    };
    let key = if cap2mol { "molecule" } else { "caption" };
    let strict = json!({ key: answer }).to_string();
    let text = match (h / 10) % 4 {
        0 => strict,
        1 => format!("Sure! Here is my answer:\n```json\n{strict}\n```"),
        2 if !answer.contains('\'') => format!("{{'{key}': '{answer}'}}"),
        _ if cap2mol => format!("The answer is {answer}."),
        _ => format!("Here is my answer.\nCaption: {answer}"),
    };
    Canned::text(&text)
}

/// Accepts and counts TCP connections without answering them.
pub struct CountingListener {
    pub addr: SocketAddr,
    count: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl CountingListener {
    pub fn start() -> CountingListener {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let count = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (c, st) = (count.clone(), stop.clone());
        std::thread::spawn(move || {
            for s in listener.incoming() {
                if st.load(Ordering::SeqCst) {
                    break;
                }
                if s.is_ok() {
                    c.fetch_add(1, Ordering::SeqCst);
                }
            }
        });
        CountingListener { addr, count, stop }
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn connections(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

impl Drop for CountingListener {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // the wake-up connection below is counted after `stop` is set, so it
        // never reaches the counter
        let _ = TcpStream::connect(self.addr);
    }
}
