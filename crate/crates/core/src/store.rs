//! File-based persistence: trace files, ratings files, label files and run
//! manifests. Every format is line-delimited JSON except the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{AgentKind, Outcome, SessionTrace, TraceStep};
use crate::rater::{HumanLabel, ScreenRating};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    IoFailure { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    SchemaViolation { path: PathBuf, line: usize, message: String },
}

impl StoreError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::IoFailure { path: path.to_path_buf(), message: e.to_string() }
    }

    fn schema(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::SchemaViolation { path: path.to_path_buf(), line, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    session_id: String,
    agent_kind: AgentKind,
    backend_label: String,
    run_label: String,
    task_id: String,
    app_name: String,
    with_confusion: bool,
    start_screen: String,
    started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutcomeRecord {
    outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    ended_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceRecord {
    Header(Header),
    Step(Box<TraceStep>),
    Outcome(OutcomeRecord),
}

/// Serializes a trace as header, step and outcome lines. Open sessions have
/// no outcome line.
pub fn trace_to_jsonl(trace: &SessionTrace) -> String {
    let header = TraceRecord::Header(Header {
        session_id: trace.session_id.clone(),
        agent_kind: trace.agent_kind,
        backend_label: trace.backend_label.clone(),
        run_label: trace.run_label.clone(),
        task_id: trace.task_id.clone(),
        app_name: trace.app_name.clone(),
        with_confusion: trace.with_confusion,
        start_screen: trace.start_screen.clone(),
        started_at: trace.started_at,
    });
    let mut records = vec![header];
    records.extend(trace.steps.iter().cloned().map(|s| TraceRecord::Step(Box::new(s))));
    if let Some(outcome) = trace.outcome {
        records.push(TraceRecord::Outcome(OutcomeRecord {
            outcome,
            error: trace.error.clone(),
            ended_at: trace.ended_at,
        }));
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

/// Parses one trace file. Errors carry the 1-based line number.
pub fn trace_from_jsonl(text: &str) -> Result<SessionTrace, (usize, String)> {
    let mut trace: Option<SessionTrace> = None;
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| (n, e.to_string()))?;
        match (rec, trace.as_mut()) {
            (TraceRecord::Header(h), None) => {
                trace = Some(SessionTrace {
                    session_id: h.session_id,
                    agent_kind: h.agent_kind,
                    backend_label: h.backend_label,
                    run_label: h.run_label,
                    task_id: h.task_id,
                    app_name: h.app_name,
                    with_confusion: h.with_confusion,
                    start_screen: h.start_screen,
                    steps: Vec::new(),
                    outcome: None,
                    error: None,
                    started_at: h.started_at,
                    ended_at: None,
                })
            }
            (TraceRecord::Header(_), Some(_)) => return Err((n, "second header record".into())),
            (_, None) => return Err((n, "first record must be the header".into())),
            (_, Some(t)) if t.outcome.is_some() => {
                return Err((n, "records after the outcome record".into()))
            }
            (TraceRecord::Step(s), Some(t)) => {
                if s.index != t.steps.len() {
                    return Err((n, format!("step index {} out of sequence", s.index)));
                }
                let expected = match t.steps.last() {
                    Some(prev) => prev.resolved.as_ref().map_or(&prev.screen, |r| &r.to),
                    None => &t.start_screen,
                };
                if s.screen != *expected {
                    return Err((n, format!("step screen {:?} does not follow from {expected:?}", s.screen)));
                }
                t.steps.push(*s);
            }
            (TraceRecord::Outcome(o), Some(t)) => {
                t.outcome = Some(o.outcome);
                t.error = o.error;
                t.ended_at = o.ended_at;
            }
        }
    }
    let trace = trace.ok_or((1, "empty trace file".to_string()))?;
    if trace.outcome.is_none() {
        return Err((last_line.max(1), "missing outcome record".into()));
    }
    Ok(trace)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| StoreError::io(path, "not a file path"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(StoreError::io(path, e));
    }
    Ok(())
}

/// Stores a trace as `<dir>/<session_id>.jsonl`.
pub fn persist_trace(trace: &SessionTrace, dir: &Path) -> Result<PathBuf, StoreError> {
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    let path = dir.join(format!("{}.jsonl", trace.session_id));
    write_atomic(&path, trace_to_jsonl(trace).as_bytes())?;
    Ok(path)
}

/// Traces found in a directory plus the files that could not be read.
#[derive(Debug, Default)]
pub struct LoadedTraces {
    pub traces: Vec<(PathBuf, SessionTrace)>,
    pub violations: Vec<StoreError>,
}

fn jsonl_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| StoreError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|x| x == "jsonl")
                && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.jsonl` trace in `dir` in file-name order. Malformed files
/// are reported in `violations` and do not stop the batch.
pub fn load_traces(dir: &Path) -> Result<LoadedTraces, StoreError> {
    let mut out = LoadedTraces::default();
    for path in jsonl_files(dir)? {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                out.violations.push(StoreError::io(&path, e));
                continue;
            }
        };
        match trace_from_jsonl(&text) {
            Ok(t) => out.traces.push((path, t)),
            Err((line, message)) => out.violations.push(StoreError::schema(&path, line, message)),
        }
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| StoreError::schema(path, i + 1, e.to_string())))
        .collect()
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn write_ratings(path: &Path, ratings: &[ScreenRating]) -> Result<(), StoreError> {
    write_atomic(path, to_jsonl(ratings).as_bytes())
}

/// Reads one ratings file, rejecting lines whose `binary` field disagrees
/// with the collapsed `rating`.
pub fn read_ratings(path: &Path) -> Result<Vec<ScreenRating>, StoreError> {
    let ratings: Vec<ScreenRating> = read_jsonl(path)?;
    if let Some(i) = ratings.iter().position(|r| !r.is_consistent()) {
        return Err(StoreError::schema(path, i + 1, "binary does not match rating"));
    }
    Ok(ratings)
}

/// All ratings files of a directory, in file-name order, with their paths.
pub fn load_ratings_dir(dir: &Path) -> Result<Vec<(PathBuf, Vec<ScreenRating>)>, StoreError> {
    jsonl_files(dir)?
        .into_iter()
        .map(|p| read_ratings(&p).map(|r| (p, r)))
        .collect()
}

pub fn read_human_labels(path: &Path) -> Result<Vec<HumanLabel>, StoreError> {
    read_jsonl(path)
}

pub fn write_human_labels(path: &Path, labels: &[HumanLabel]) -> Result<(), StoreError> {
    write_atomic(path, to_jsonl(labels).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, StoreError> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| StoreError::io(path, e))
}

/// A file referenced from a run manifest, pinned by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self, StoreError> {
        Ok(Self { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

/// Everything needed to reproduce one `walk` or `rate-screens` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub app_manifest: FileRef,
    pub task_ids: Vec<String>,
    /// Absent for replays, which are driven by `recording` alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_config: Option<FileRef>,
    pub backend_label: String,
    pub with_confusion: bool,
    pub without_context: bool,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording: Option<FileRef>,
    pub created_at: DateTime<Utc>,
    /// Files produced by the run, relative to `output_dir`.
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn file_name(run_id: &str) -> String {
        format!("run-{run_id}.json")
    }

    /// Writes the manifest into `output_dir`. A second run with the same id
    /// in the same directory is refused.
    pub fn write(&self, overwrite: bool) -> Result<PathBuf, StoreError> {
        if self.repetitions < 1 {
            return Err(StoreError::schema(Path::new(&self.run_id), 0, "repetitions must be >= 1"));
        }
        let path = self.output_dir.join(Self::file_name(&self.run_id));
        if path.exists() && !overwrite {
            return Err(StoreError::io(&path, format!("run id {:?} already exists", self.run_id)));
        }
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::schema(path, e.line(), e.to_string()))
    }
}
