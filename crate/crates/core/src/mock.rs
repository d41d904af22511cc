//! Deterministic stand-in for an OpenAI-compatible completions server, with
//! fault injection for exercising the generation client.

use std::collections::{HashMap, HashSet};
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

/// How the mock answers a prompt.
#[derive(Debug, Clone, Default)]
pub struct MockResponder {
    /// Source text to output. Unknown sources are echoed back.
    pub translations: HashMap<String, String>,
    /// Continue past the translation with a newline and a fresh instruction,
    /// as base models tend to do.
    pub overgenerate: bool,
}

impl MockResponder {
    pub fn echo() -> Self {
        Self::default()
    }

    pub fn reference(translations: HashMap<String, String>) -> Self {
        Self {
            translations,
            overgenerate: false,
        }
    }

    pub fn overgenerating(mut self) -> Self {
        self.overgenerate = true;
        self
    }

    fn answer(&self, prompt: &str, stop: &[String], max_tokens: usize) -> Value {
        let source = final_source(prompt).unwrap_or("");
        let translation = self.translations.get(source).map_or(source, String::as_str);
        let mut text = format!(" {translation}");
        if self.overgenerate {
            text.push_str("\n\n");
            text.push_str(prompt.lines().find(|l| l.starts_with("Translate")).unwrap_or(""));
            text.push_str("\nSource: ");
            text.push_str(source);
        }
        let mut finish = "stop";
        let mut stop_reason = Value::Null;
        if let Some((cut, s)) = stop
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| text.find(s.as_str()).map(|i| (i, s)))
            .min_by_key(|(i, _)| *i)
        {
            text.truncate(cut);
            stop_reason = json!(s);
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > max_tokens {
            text = format!(" {}", words[..max_tokens].join(" "));
            finish = "length";
            stop_reason = Value::Null;
        } else if self.overgenerate && stop_reason.is_null() {
            // Without a stop sequence a base model runs to the token cap.
            finish = "length";
        }
        json!({
            "object": "text_completion",
            "choices": [{"index": 0, "text": text, "finish_reason": finish, "stop_reason": stop_reason}],
        })
    }
}

/// The text of the last `Source:` line, i.e. the sentence to translate.
fn final_source(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Source: "))
}

#[derive(Debug, Default)]
struct Faults {
    rate_limited: usize,
    failing_sources: HashSet<String>,
}

struct State {
    responder: MockResponder,
    faults: Mutex<Faults>,
    requests: AtomicUsize,
}

pub struct MockServer {
    server: Arc<Server>,
    state: Arc<State>,
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts on an ephemeral localhost port.
    pub fn start(responder: MockResponder) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", responder)
    }

    pub fn bind(addr: &str, responder: MockResponder) -> io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("mock server is not bound to an IP address"))?;
        let state = Arc::new(State {
            responder,
            faults: Mutex::new(Faults::default()),
            requests: AtomicUsize::new(0),
        });
        let handle = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    let state = Arc::clone(&state);
                    thread::spawn(move || handle(request, &state));
                }
            })
        };
        Ok(Self {
            server,
            state,
            addr,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/completions", self.addr)
    }

    /// The next `n` requests are answered with HTTP 429.
    pub fn inject_rate_limits(&self, n: usize) {
        self.state.faults.lock().unwrap().rate_limited += n;
    }

    /// Requests whose final source equals `source` always get HTTP 500.
    pub fn fail_source(&self, source: &str) {
        self.state.faults.lock().unwrap().failing_sources.insert(source.to_string());
    }

    pub fn clear_faults(&self) {
        *self.state.faults.lock().unwrap() = Faults::default();
    }

    pub fn request_count(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_response(code: u16, body: Value) -> Response<io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body.to_string())
        .with_status_code(code)
        .with_header(header)
}

fn handle(mut request: tiny_http::Request, state: &State) {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let mut body = String::new();
    let parsed: Result<Value, String> = request
        .as_reader()
        .read_to_string(&mut body)
        .map_err(|e| e.to_string())
        .and_then(|_| serde_json::from_str(&body).map_err(|e| e.to_string()));
    let response = match parsed {
        Err(e) => json_response(400, json!({"error": e})),
        Ok(req) => {
            let prompt = req["prompt"].as_str().unwrap_or_default();
            let stop: Vec<String> = match &req["stop"] {
                Value::String(s) => vec![s.clone()],
                Value::Array(a) => a.iter().filter_map(|v| v.as_str().map(String::from)).collect(),
                _ => Vec::new(),
            };
            let max_tokens = req["max_tokens"].as_u64().unwrap_or(16) as usize;
            let mut faults = state.faults.lock().unwrap();
            if faults.rate_limited > 0 {
                faults.rate_limited -= 1;
                json_response(429, json!({"error": "rate limited"}))
            } else if final_source(prompt).is_some_and(|s| faults.failing_sources.contains(s)) {
                json_response(500, json!({"error": "injected failure"}))
            } else {
                drop(faults);
                json_response(200, state.responder.answer(prompt, &stop, max_tokens))
            }
        }
    };
    let _ = request.respond(response);
}
