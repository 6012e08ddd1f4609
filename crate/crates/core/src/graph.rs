//! Screen-graph model of a prototype app.
//!
//! An app is a set of screenshots joined by labeled transitions, plus the
//! tasks a walkthrough asks the evaluator to accomplish. The graph is authored
//! as a single JSON manifest next to an image directory and is immutable once
//! loaded.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Returns true when `id` is a non-empty token over `[A-Za-z0-9_#.-]`.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '#' | '.' | '-'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    /// Path to the screenshot, relative to the manifest directory.
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Tap,
    Scroll,
    Swipe,
    Type,
    Back,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    /// Canonical action phrase, e.g. "tap profile icon".
    pub action: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    pub kind: TransitionKind,
    pub to: String,
}

impl Transition {
    /// Stable identifier used by clickable chips in the human UI.
    pub fn id(&self) -> String {
        format!("{}::{}", self.from, self.action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
    pub start: String,
    pub goals: Vec<String>,
    #[serde(default)]
    pub correct_paths: Vec<Vec<String>>,
}

impl Task {
    pub fn is_goal(&self, screen: &str) -> bool {
        self.goals.iter().any(|g| g == screen)
    }
}

/// On-disk manifest layout. Field order here is the serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub screens: Vec<Screen>,
    pub transitions: Vec<Transition>,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    DuplicateId,
    InvalidId,
    DanglingReference,
    MissingImage,
    EmptyActionLabel,
    DuplicateAction,
    EmptyGoalSet,
    InvalidCorrectPath,
    DeadEnd,
}

/// One violated rule, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} [{}]: {}", self.kind, self.entity, self.message)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read manifest {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest syntax error in {path}: {message}")]
    ManifestSyntax { path: PathBuf, message: String },
    #[error("dangling reference: {0}")]
    DanglingReference(Finding),
    #[error("missing image: {0}")]
    MissingImage(Finding),
    #[error("invalid correct path: {0}")]
    InvalidCorrectPath(Finding),
    #[error("invalid app graph ({} findings): {}", .0.len(), .0.first().map(|f| f.to_string()).unwrap_or_default())]
    Invalid(Vec<Finding>),
    #[error("unknown screen {0:?}")]
    UnknownScreen(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppGraph {
    manifest: Manifest,
    base_dir: PathBuf,
    screen_index: HashMap<String, usize>,
}

impl AppGraph {
    /// Builds a graph without validating it. Use [`load_app_graph`] for the
    /// checked path.
    pub fn from_manifest(manifest: Manifest, base_dir: impl Into<PathBuf>) -> Self {
        let mut screen_index = HashMap::new();
        for (i, s) in manifest.screens.iter().enumerate() {
            screen_index.entry(s.id.clone()).or_insert(i);
        }
        Self {
            manifest,
            base_dir: base_dir.into(),
            screen_index,
        }
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn screens(&self) -> &[Screen] {
        &self.manifest.screens
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.manifest.transitions
    }

    pub fn tasks(&self) -> &[Task] {
        &self.manifest.tasks
    }

    pub fn screen(&self, id: &str) -> Option<&Screen> {
        self.screen_index.get(id).map(|&i| &self.manifest.screens[i])
    }

    pub fn has_screen(&self, id: &str) -> bool {
        self.screen_index.contains_key(id)
    }

    pub fn task(&self, id: &str) -> Result<&Task, GraphError> {
        self.manifest
            .tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| GraphError::UnknownTask(id.to_string()))
    }

    /// Absolute (or base-relative) location of a screen's screenshot.
    pub fn image_path(&self, screen_id: &str) -> Result<PathBuf, GraphError> {
        let screen = self
            .screen(screen_id)
            .ok_or_else(|| GraphError::UnknownScreen(screen_id.to_string()))?;
        Ok(self.base_dir.join(&screen.image))
    }

    /// Outgoing transitions of `screen`, in manifest order.
    pub fn available_transitions(&self, screen: &str) -> Result<Vec<&Transition>, GraphError> {
        if !self.has_screen(screen) {
            return Err(GraphError::UnknownScreen(screen.to_string()));
        }
        Ok(self
            .manifest
            .transitions
            .iter()
            .filter(|t| t.from == screen)
            .collect())
    }

    /// The transition joining two screens, if one exists (first in manifest order).
    pub fn transition_between(&self, from: &str, to: &str) -> Option<&Transition> {
        self.manifest
            .transitions
            .iter()
            .find(|t| t.from == from && t.to == to)
    }

    pub fn transition_by_id(&self, id: &str) -> Option<&Transition> {
        self.manifest.transitions.iter().find(|t| t.id() == id)
    }

    /// Serializes back to manifest JSON (pretty, trailing newline).
    pub fn to_manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Reads and parses a manifest without checking graph rules.
pub fn read_manifest(manifest_path: impl AsRef<Path>) -> Result<AppGraph, GraphError> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| GraphError::ManifestSyntax {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(AppGraph::from_manifest(manifest, base_dir))
}

/// Reads, parses and validates a manifest. Image paths resolve against the
/// manifest's directory.
pub fn load_app_graph(manifest_path: impl AsRef<Path>) -> Result<AppGraph, GraphError> {
    let graph = read_manifest(manifest_path)?;
    let findings = validate_graph(&graph);
    if findings.is_empty() {
        return Ok(graph);
    }
    Err(findings_to_error(findings))
}

fn findings_to_error(findings: Vec<Finding>) -> GraphError {
    let pick = |kind: FindingKind| findings.iter().find(|f| f.kind == kind).cloned();
    if let Some(f) = pick(FindingKind::DanglingReference) {
        GraphError::DanglingReference(f)
    } else if let Some(f) = pick(FindingKind::MissingImage) {
        GraphError::MissingImage(f)
    } else if let Some(f) = pick(FindingKind::InvalidCorrectPath) {
        GraphError::InvalidCorrectPath(f)
    } else {
        GraphError::Invalid(findings)
    }
}

/// Checks every graph and task rule. An empty result means the graph is
/// well formed.
pub fn validate_graph(graph: &AppGraph) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |kind, entity: &str, message: String| {
        out.push(Finding {
            kind,
            entity: entity.to_string(),
            message,
        })
    };
    let m = &graph.manifest;

    let mut seen = HashSet::new();
    for s in &m.screens {
        if !is_valid_id(&s.id) {
            push(FindingKind::InvalidId, &s.id, "screen id is not a valid token".into());
        }
        if !seen.insert(s.id.as_str()) {
            push(FindingKind::DuplicateId, &s.id, "screen id declared more than once".into());
        }
        if !graph.base_dir.join(&s.image).is_file() {
            push(
                FindingKind::MissingImage,
                &s.id,
                format!("image {} not found", s.image.display()),
            );
        }
    }

    let mut actions = HashSet::new();
    for t in &m.transitions {
        let entity = t.id();
        for end in [&t.from, &t.to] {
            if !graph.has_screen(end) {
                push(
                    FindingKind::DanglingReference,
                    &entity,
                    format!("transition references unknown screen {end:?}"),
                );
            }
        }
        if t.action.trim().is_empty() {
            push(FindingKind::EmptyActionLabel, &entity, "action label is empty".into());
        }
        if !actions.insert((t.from.as_str(), t.action.as_str())) {
            push(
                FindingKind::DuplicateAction,
                &entity,
                "action label repeated on the same screen".into(),
            );
        }
    }

    let mut task_ids = HashSet::new();
    for task in &m.tasks {
        let entity = format!("task:{}", task.id);
        if !is_valid_id(&task.id) {
            push(FindingKind::InvalidId, &entity, "task id is not a valid token".into());
        }
        if !task_ids.insert(task.id.as_str()) {
            push(FindingKind::DuplicateId, &entity, "task id declared more than once".into());
        }
        if !graph.has_screen(&task.start) {
            push(
                FindingKind::DanglingReference,
                &entity,
                format!("start screen {:?} is unknown", task.start),
            );
        }
        if task.goals.is_empty() {
            push(FindingKind::EmptyGoalSet, &entity, "task has no goal screens".into());
        }
        for g in &task.goals {
            if !graph.has_screen(g) {
                push(
                    FindingKind::DanglingReference,
                    &entity,
                    format!("goal screen {g:?} is unknown"),
                );
            }
        }
        for (i, path) in task.correct_paths.iter().enumerate() {
            if let Err(msg) = check_path(graph, task, path) {
                push(
                    FindingKind::InvalidCorrectPath,
                    &entity,
                    format!("correct path #{i}: {msg}"),
                );
            }
        }
    }

    for id in reachable_from_starts(graph) {
        let is_goal = m.tasks.iter().any(|t| t.is_goal(id));
        let has_out = m.transitions.iter().any(|t| t.from == id);
        if !is_goal && !has_out {
            push(
                FindingKind::DeadEnd,
                id,
                "reachable screen is neither a goal nor has outgoing transitions".into(),
            );
        }
    }

    out
}

fn check_path(graph: &AppGraph, task: &Task, path: &[String]) -> Result<(), String> {
    let (first, last) = match (path.first(), path.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err("path is empty".into()),
    };
    if *first != task.start {
        return Err(format!("begins at {first:?}, not the start screen {:?}", task.start));
    }
    if !task.is_goal(last) {
        return Err(format!("ends at {last:?}, which is not a goal screen"));
    }
    for pair in path.windows(2) {
        if graph.transition_between(&pair[0], &pair[1]).is_none() {
            return Err(format!("no transition {:?} -> {:?}", pair[0], pair[1]));
        }
    }
    Ok(())
}

fn reachable_from_starts(graph: &AppGraph) -> Vec<&str> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut order = Vec::new();
    let mut queue: VecDeque<&str> = graph
        .manifest
        .tasks
        .iter()
        .map(|t| t.start.as_str())
        .filter(|s| graph.has_screen(s))
        .collect();
    while let Some(s) = queue.pop_front() {
        if !seen.insert(s) {
            continue;
        }
        order.push(s);
        for t in graph.manifest.transitions.iter().filter(|t| t.from == s) {
            if graph.has_screen(&t.to) && !seen.contains(t.to.as_str()) {
                queue.push_back(&t.to);
            }
        }
    }
    order
}
