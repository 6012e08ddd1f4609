use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{check_history, AgentBackend, BackendConfig, BackendError, ChatRequest, ChatTurn, Role};

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Provider-style chat-completions client. Screenshots travel inline as
/// base64 data URLs; the API key is read once from the environment variable
/// the config names and never written anywhere.
pub struct RemoteChatBackend {
    label: String,
    model: String,
    endpoint: String,
    temperature: Option<f64>,
    max_retries: u32,
    backoff_base: Duration,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    permits: Permits,
}

impl std::fmt::Debug for RemoteChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteChatBackend")
            .field("label", &self.label)
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl RemoteChatBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("remote_chat needs an endpoint".into()))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            label: config.model_label.clone(),
            model: config.model.clone().unwrap_or_else(|| config.model_label.clone()),
            endpoint,
            temperature: config.temperature,
            max_retries: config.max_retries,
            backoff_base: Duration::from_millis(config.backoff_base_ms),
            api_key,
            client,
            permits: Permits::new(config.max_concurrent.max(1)),
        })
    }

    /// The JSON body sent for `turns`.
    pub fn request_body(&self, turns: &[ChatTurn]) -> Result<Value, BackendError> {
        let messages = turns
            .iter()
            .map(encode_turn)
            .collect::<Result<Vec<_>, _>>()?;
        let mut body = json!({ "model": self.model, "messages": messages });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        Ok(body)
    }

    fn send_once(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(BackendError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Attempt::Retry(BackendError::Transport(e.to_string())))?;
        if status.as_u16() == 429 {
            return Err(Attempt::Retry(BackendError::RateLimited(format!("HTTP 429 from {}", self.endpoint))));
        }
        if status.is_server_error() {
            return Err(Attempt::Retry(BackendError::Transport(format!("HTTP {status} from {}", self.endpoint))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Transport(format!(
                "HTTP {status} from {}: {}",
                self.endpoint,
                truncate(&text, 200)
            ))));
        }
        extract_content(&text).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

fn encode_turn(turn: &ChatTurn) -> Result<Value, BackendError> {
    let role = match turn.role {
        Role::System => "system",
        Role::Facilitator => "user",
        Role::Evaluator => "assistant",
    };
    if turn.images.is_empty() {
        return Ok(json!({ "role": role, "content": turn.text }));
    }
    let mut parts = Vec::new();
    if !turn.text.is_empty() {
        parts.push(json!({ "type": "text", "text": turn.text }));
    }
    for img in &turn.images {
        let bytes = std::fs::read(&img.path)
            .map_err(|e| BackendError::IoFailure(format!("{}: {e}", img.path.display())))?;
        let url = format!("data:{};base64,{}", mime_for(&img.path), STANDARD.encode(bytes));
        parts.push(json!({ "type": "image_url", "image_url": { "url": url } }));
    }
    Ok(json!({ "role": role, "content": parts }))
}

fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Transport(format!("response is not JSON: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(BackendError::Transport("response has no choices[0].message.content".into())),
    }
}

impl AgentBackend for RemoteChatBackend {
    fn label(&self) -> &str {
        &self.label
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        check_history(request.turns)?;
        let body = self.request_body(request.turns)?;
        let _permit = self.permits.acquire();
        let mut attempt = 0u32;
        loop {
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.max_retries => return Err(e),
                Err(Attempt::Retry(_)) => {
                    thread::sleep(self.backoff_base * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendKind, ImageRef};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP server answering each connection from `replies` in turn.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        thread::spawn(move || {
            for (status, body) in replies {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(idx) = text.find("\r\n\r\n") {
                        let len = text[..idx]
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if buf.len() >= idx + 4 + len {
                            b.lock().unwrap().push(text[..].to_string());
                            break;
                        }
                    }
                }
                h.fetch_add(1, Ordering::SeqCst);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (format!("http://{addr}/v1/chat/completions"), hits, bodies)
    }

    fn config(endpoint: String) -> BackendConfig {
        let mut c = BackendConfig::new(BackendKind::RemoteChat, "test-model");
        c.endpoint = Some(endpoint);
        c.backoff_base_ms = 5;
        c.timeout_secs = 5;
        c
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let (url, hits, _) = serve(vec![(500, "{}".into()); 3]);
        let b = RemoteChatBackend::from_config(&config(url)).unwrap();
        let turns = [ChatTurn::system("p")];
        let err = b.complete(&ChatRequest { session_id: "s", script_key: "t", turns: &turns }).unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn rate_limit_then_success() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        let (url, hits, _) = serve(vec![(429, "{}".into()), (200, ok.into())]);
        let b = RemoteChatBackend::from_config(&config(url)).unwrap();
        let turns = [ChatTurn::system("p")];
        let out = b.complete(&ChatRequest { session_id: "s", script_key: "t", turns: &turns }).unwrap();
        assert_eq!(out, "hello");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn persistent_rate_limit_is_typed() {
        let (url, _, _) = serve(vec![(429, "{}".into()); 3]);
        let b = RemoteChatBackend::from_config(&config(url)).unwrap();
        let turns = [ChatTurn::system("p")];
        let err = b.complete(&ChatRequest { session_id: "s", script_key: "t", turns: &turns }).unwrap_err();
        assert!(matches!(err, BackendError::RateLimited(_)));
    }

    #[test]
    fn images_are_inlined_and_key_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("home.png");
        std::fs::write(&img, [1u8, 2, 3]).unwrap();
        std::env::set_var("COGWALK_TEST_KEY", "sk-secret");
        let mut cfg = config("http://127.0.0.1:9/".into());
        cfg.api_key_env = Some("COGWALK_TEST_KEY".into());
        cfg.temperature = Some(0.0);
        let b = RemoteChatBackend::from_config(&cfg).unwrap();
        let turns = [
            ChatTurn::system("prompt"),
            ChatTurn::facilitator("look", vec![ImageRef { screen_id: "home".into(), path: img }]),
        ];
        let body = b.request_body(&turns).unwrap();
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(body["temperature"], 0.0);
        assert!(!body.to_string().contains("sk-secret"));
        assert!(!format!("{b:?}").contains("sk-secret"));
    }
}
