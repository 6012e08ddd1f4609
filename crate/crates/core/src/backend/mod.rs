//! Agent backends: anything that turns a chat history into evaluator text.
//!
//! Three kinds ship here: a remote chat-completions client with inline image
//! payloads, a scripted backend for deterministic tests, and a record/replay
//! pair keyed by a canonical hash of the request.

mod remote;
mod replay;
mod scripted;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::RemoteChatBackend;
pub use replay::{RecordingBackend, ReplayBackend};
pub use scripted::{Script, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Facilitator,
    Evaluator,
}

/// A screenshot attached to a turn, by screen id and resolved file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub screen_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), images: Vec::new() }
    }

    pub fn facilitator(text: impl Into<String>, images: Vec<ImageRef>) -> Self {
        Self { role: Role::Facilitator, text: text.into(), images }
    }

    pub fn evaluator(text: impl Into<String>) -> Self {
        Self { role: Role::Evaluator, text: text.into(), images: Vec::new() }
    }
}

/// One backend call. `script_key` tells the scripted backend which script to
/// read; `session_id` scopes its cursor. Neither is part of the request hash.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub session_id: &'a str,
    pub script_key: &'a str,
    pub turns: &'a [ChatTurn],
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("script exhausted for {key:?} after {served} responses")]
    ScriptExhausted { key: String, served: usize },
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait AgentBackend: Send + Sync {
    /// Label written into traces (model name, script name).
    fn label(&self) -> &str;

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for Box<B> {
    fn label(&self) -> &str {
        (**self).label()
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for std::sync::Arc<B> {
    fn label(&self) -> &str {
        (**self).label()
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Rejects histories that break turn invariants.
pub fn check_history(turns: &[ChatTurn]) -> Result<(), BackendError> {
    if turns.is_empty() {
        return Err(BackendError::InvalidRequest("history is empty".into()));
    }
    for (i, t) in turns.iter().enumerate() {
        if !t.images.is_empty() && t.role != Role::Facilitator {
            return Err(BackendError::InvalidRequest(format!(
                "turn {i}: images are only allowed on facilitator turns"
            )));
        }
        if t.text.is_empty() && t.images.is_empty() {
            return Err(BackendError::InvalidRequest(format!("turn {i}: empty text")));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CanonicalTurn<'a> {
    role: Role,
    text: &'a str,
    images: Vec<&'a str>,
}

/// Hex SHA-256 of the canonical JSON form of `turns`. Images contribute their
/// screen ids, not file paths, so the hash is stable across machines.
pub fn request_hash(turns: &[ChatTurn]) -> String {
    let canon: Vec<CanonicalTurn<'_>> = turns
        .iter()
        .map(|t| CanonicalTurn {
            role: t.role,
            text: &t.text,
            images: t.images.iter().map(|i| i.screen_id.as_str()).collect(),
        })
        .collect();
    let bytes = serde_json::to_vec(&canon).expect("canonical turns serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    Scripted,
    Replay,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    1000
}
fn default_concurrency() -> usize {
    4
}

/// Backend settings, usually read from a TOML file. Relative paths resolve
/// against that file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_label: String,
    /// Model name sent to the provider; defaults to `model_label`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// `None` leaves sampling at the provider default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording_path: Option<PathBuf>,
}

impl BackendConfig {
    pub fn new(kind: BackendKind, model_label: impl Into<String>) -> Self {
        Self {
            kind,
            endpoint: None,
            model_label: model_label.into(),
            model: None,
            temperature: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff(),
            max_concurrent: default_concurrency(),
            api_key_env: None,
            script_path: None,
            recording_path: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::IoFailure(format!("{}: {e}", path.display())))?;
        let mut cfg: BackendConfig = toml::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.script_path, &mut cfg.recording_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(BackendError::Config(msg.into())) };
        need(
            self.endpoint.is_some() == (self.kind == BackendKind::RemoteChat),
            "endpoint is required for remote_chat and only allowed there",
        )?;
        need(
            self.script_path.is_some() == (self.kind == BackendKind::Scripted),
            "script_path is required for scripted and only allowed there",
        )?;
        need(
            self.kind != BackendKind::Replay || self.recording_path.is_some(),
            "recording_path is required for replay",
        )?;
        need(self.temperature.is_none_or(|t| t >= 0.0), "temperature must be >= 0")?;
        need(self.max_concurrent >= 1, "max_concurrent must be >= 1")?;
        need(!self.model_label.trim().is_empty(), "model_label must be non-empty")
    }
}

/// Builds the backend a config describes.
pub fn open_backend(config: &BackendConfig) -> Result<Box<dyn AgentBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Scripted => {
            let path = config.script_path.as_ref().expect("validated");
            Box::new(ScriptedBackend::new(config.model_label.clone(), Script::load(path)?))
        }
        BackendKind::Replay => {
            let path = config.recording_path.as_ref().expect("validated");
            Box::new(ReplayBackend::load(config.model_label.clone(), path)?)
        }
        BackendKind::RemoteChat => Box::new(RemoteChatBackend::from_config(config)?),
    })
}
