use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_history, request_hash, AgentBackend, BackendError, ChatRequest};

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    hash: String,
    response: String,
}

/// Passthrough backend that appends `(request hash, response)` lines to a
/// recording file. Only the response text and hash are written.
pub struct RecordingBackend<B> {
    inner: B,
    out: Mutex<File>,
}

impl<B: AgentBackend> RecordingBackend<B> {
    /// Refuses to clobber an existing recording unless `force` is set.
    pub fn create(inner: B, path: impl AsRef<Path>, force: bool) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let mut opts = OpenOptions::new();
        opts.write(true);
        if force {
            opts.create(true).truncate(true);
        } else {
            opts.create_new(true);
        }
        let out = opts
            .open(path)
            .map_err(|e| BackendError::IoFailure(format!("{}: {e}", path.display())))?;
        Ok(Self { inner, out: Mutex::new(out) })
    }
}

impl<B: AgentBackend> AgentBackend for RecordingBackend<B> {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let response = self.inner.complete(request)?;
        let line = RecordLine { hash: request_hash(request.turns), response };
        let mut out = self.out.lock().expect("recording lock");
        let mut bytes = serde_json::to_vec(&line).expect("record line serializes");
        bytes.push(b'\n');
        out.write_all(&bytes)
            .and_then(|_| out.flush())
            .map_err(|e| BackendError::IoFailure(e.to_string()))?;
        Ok(line.response)
    }
}

/// Serves recorded responses by request hash. Identical requests recorded
/// several times are served in recording order.
#[derive(Debug)]
pub struct ReplayBackend {
    label: String,
    entries: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn load(label: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| BackendError::IoFailure(format!("{}: {e}", path.display())))?;
        let mut entries: HashMap<String, VecDeque<String>> = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::IoFailure(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line).map_err(|e| {
                BackendError::Config(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            entries.entry(rec.hash).or_default().push_back(rec.response);
        }
        Ok(Self { label: label.into(), entries: Mutex::new(entries) })
    }
}

impl AgentBackend for ReplayBackend {
    fn label(&self) -> &str {
        &self.label
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        check_history(request.turns)?;
        let hash = request_hash(request.turns);
        let mut entries = self.entries.lock().expect("replay lock");
        entries
            .get_mut(&hash)
            .and_then(VecDeque::pop_front)
            .ok_or(BackendError::ReplayMiss(hash))
    }
}
