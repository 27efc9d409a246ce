//! Scripted chat-completions mock server.
//!
//! Speaks the same wire protocol as the real evaluation client, scripted by a
//! map from prompt digest (or arrival index) to a canned response, with
//! optional injected latency and failures. Tracks a concurrent-connection
//! high-water mark so tests can assert the client's concurrency bound.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Stable digest of a prompt's user-message content, used as a script key.
pub fn prompt_digest(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedResponse {
    #[serde(default)]
    pub text: Option<String>,
    /// token → logprob map surfaced as choices[0].logprobs.top_logprobs
    #[serde(default)]
    pub logprobs: Option<HashMap<String, f64>>,
    /// non-200 turns the request into an injected failure
    #[serde(default)]
    pub status: Option<u16>,
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

impl ScriptedResponse {
    pub fn text(s: impl Into<String>) -> Self {
        ScriptedResponse {
            text: Some(s.into()),
            ..Default::default()
        }
    }

    pub fn failure(status: u16) -> Self {
        ScriptedResponse {
            status: Some(status),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    /// prompt digest → response
    #[serde(default)]
    pub by_digest: HashMap<String, ScriptedResponse>,
    /// fallback by arrival index when no digest matches
    #[serde(default)]
    pub by_index: Vec<ScriptedResponse>,
    #[serde(default)]
    pub default: Option<ScriptedResponse>,
}

impl MockScript {
    pub fn script_text(&mut self, prompt: &str, response: impl Into<String>) {
        self.by_digest
            .insert(prompt_digest(prompt), ScriptedResponse::text(response));
    }

    pub fn script(&mut self, prompt: &str, response: ScriptedResponse) {
        self.by_digest.insert(prompt_digest(prompt), response);
    }
}

struct Gauges {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    arrivals: AtomicUsize,
    shutdown: AtomicBool,
}

/// A running mock endpoint bound to a local port.
pub struct MockServer {
    addr: String,
    gauges: Arc<Gauges>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: MockScript) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = format!("http://{}", listener.local_addr()?);
        let gauges = Arc::new(Gauges {
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            arrivals: AtomicUsize::new(0),
            shutdown: AtomicBool::new(false),
        });
        let script = Arc::new(script);
        let g = Arc::clone(&gauges);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if g.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let g = Arc::clone(&g);
                let script = Arc::clone(&script);
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &script, &g);
                });
            }
        });
        Ok(MockServer {
            addr,
            gauges,
            handle: Some(handle),
        })
    }

    /// Base URL for an endpoint config pointing at this server.
    pub fn base_url(&self) -> &str {
        &self.addr
    }

    /// Highest number of simultaneously in-flight requests observed.
    pub fn max_observed_concurrency(&self) -> usize {
        self.gauges.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests_served(&self) -> usize {
        self.gauges.arrivals.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.gauges.shutdown.store(true, Ordering::SeqCst);
        // unblock the accept loop
        if let Some(hostport) = self.addr.strip_prefix("http://") {
            let _ = TcpStream::connect(hostport);
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    script: &MockScript,
    gauges: &Gauges,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    if request_line.trim().is_empty() {
        return Ok(()); // shutdown poke
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let in_flight = gauges.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    gauges.max_in_flight.fetch_max(in_flight, Ordering::SeqCst);
    let index = gauges.arrivals.fetch_add(1, Ordering::SeqCst);

    let result = respond(&mut stream, &body, script, index);
    gauges.in_flight.fetch_sub(1, Ordering::SeqCst);
    result
}

fn respond(
    stream: &mut TcpStream,
    body: &[u8],
    script: &MockScript,
    index: usize,
) -> std::io::Result<()> {
    let request: Value = serde_json::from_slice(body).unwrap_or(Value::Null);
    let content = request["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or("");
    let scripted = script
        .by_digest
        .get(&prompt_digest(content))
        .or_else(|| script.by_index.get(index))
        .or(script.default.as_ref());

    let Some(scripted) = scripted else {
        return write_response(stream, 404, &json!({"error": "no scripted response"}));
    };
    if let Some(ms) = scripted.latency_ms {
        std::thread::sleep(Duration::from_millis(ms));
    }
    if let Some(status) = scripted.status {
        if status != 200 {
            return write_response(stream, status, &json!({"error": "injected failure"}));
        }
    }
    let mut choice = json!({
        "index": 0,
        "message": {"role": "assistant", "content": scripted.text.clone().unwrap_or_default()},
        "finish_reason": "stop"
    });
    if let Some(lp) = &scripted.logprobs {
        choice["logprobs"] = json!({ "top_logprobs": lp });
    }
    let response = json!({
        "id": format!("mock-{index}"),
        "object": "chat.completion",
        "model": "mock",
        "choices": [choice],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
    });
    write_response(stream, 200, &response)
}

fn write_response(stream: &mut TcpStream, status: u16, body: &Value) -> std::io::Result<()> {
    let body = serde_json::to_string(body).expect("serializable");
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        429 => "Too Many Requests",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}
