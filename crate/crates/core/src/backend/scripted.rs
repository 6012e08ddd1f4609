use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::Value;

use super::{check_history, AgentBackend, BackendError, ChatRequest};

/// Pre-authored evaluator replies keyed by script key (a task id for
/// walkthroughs, `task/screen` for isolated screen ratings).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    responses: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    responses: BTreeMap<String, Vec<Value>>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.responses
            .insert(key.into(), replies.into_iter().map(Into::into).collect());
        self
    }

    /// Reads `{"responses": {"<key>": [reply, ...]}}`. A reply is either a raw
    /// string or a JSON object, which is served in compact form.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let file: ScriptFile =
            serde_json::from_str(text).map_err(|e| BackendError::Config(format!("script: {e}")))?;
        let responses = file
            .responses
            .into_iter()
            .map(|(k, vs)| {
                let vs = vs
                    .into_iter()
                    .map(|v| match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    })
                    .collect();
                (k, vs)
            })
            .collect();
        Ok(Self { responses })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::IoFailure(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn replies(&self, key: &str) -> &[String] {
        self.responses.get(key).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Serves script replies in order. Each session id gets its own cursor, so
/// repeated sessions of the same task replay the same script.
#[derive(Debug)]
pub struct ScriptedBackend {
    label: String,
    script: Script,
    cursors: Mutex<HashMap<(String, String), usize>>,
}

impl ScriptedBackend {
    pub fn new(label: impl Into<String>, script: Script) -> Self {
        Self {
            label: label.into(),
            script,
            cursors: Mutex::new(HashMap::new()),
        }
    }
}

impl AgentBackend for ScriptedBackend {
    fn label(&self) -> &str {
        &self.label
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        check_history(request.turns)?;
        let replies = self.script.replies(request.script_key);
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors
            .entry((request.session_id.to_string(), request.script_key.to_string()))
            .or_insert(0);
        let reply = replies.get(*cursor).cloned().ok_or_else(|| BackendError::ScriptExhausted {
            key: request.script_key.to_string(),
            served: *cursor,
        })?;
        *cursor += 1;
        Ok(reply)
    }
}
