//! Failure-point ratings: inline ratings pulled from walkthrough traces,
//! isolated-screen ratings from a backend, and coded human labels.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, BackendError, ChatRequest, ChatTurn, ImageRef};
use crate::engine::SessionTrace;
use crate::graph::AppGraph;
use crate::protocol::{
    collapse_rating, parse_screen_rating, BinaryRating, ConfusionRating, ParseError, PromptError,
    PromptSet, TemplateId,
};

/// Rater id used for the coded human row.
pub const HUMAN_RATER: &str = "human";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingMode {
    WithContext,
    WithoutContext,
}

impl RatingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WithContext => "with_context",
            Self::WithoutContext => "without_context",
        }
    }
}

/// One line of a ratings file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenRating {
    pub run_label: String,
    pub mode: RatingMode,
    #[serde(rename = "app")]
    pub app_name: String,
    #[serde(rename = "task")]
    pub task_id: String,
    pub screen: String,
    pub rating: ConfusionRating,
    pub binary: BinaryRating,
    pub rationale: String,
}

impl ScreenRating {
    pub fn new(
        run_label: impl Into<String>,
        mode: RatingMode,
        app_name: impl Into<String>,
        task_id: impl Into<String>,
        screen: impl Into<String>,
        rating: ConfusionRating,
        rationale: impl Into<String>,
    ) -> Self {
        Self {
            run_label: run_label.into(),
            mode,
            app_name: app_name.into(),
            task_id: task_id.into(),
            screen: screen.into(),
            rating,
            binary: collapse_rating(rating),
            rationale: rationale.into(),
        }
    }

    /// Row label in a rating matrix.
    pub fn rater_id(&self) -> String {
        format!("{}@{}", self.run_label, self.mode.as_str())
    }

    /// False when `binary` disagrees with the collapsed `rating`.
    pub fn is_consistent(&self) -> bool {
        self.binary == collapse_rating(self.rating)
    }
}

/// One coded human label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanLabel {
    pub task: String,
    pub screen: String,
    pub confusing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A rated item: (app, task, screen).
pub type ItemKey = (String, String, String);

/// One rater's binary ratings; absent cells are simply missing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RatingRow {
    pub rater: String,
    pub cells: BTreeMap<ItemKey, BinaryRating>,
}

/// Raters by id. Cells are combined by max severity when a rater rates the
/// same item twice.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RatingMatrix {
    pub rows: BTreeMap<String, RatingRow>,
}

impl RatingMatrix {
    pub fn insert(&mut self, rater: &str, item: ItemKey, value: BinaryRating) {
        let row = self.rows.entry(rater.to_string()).or_insert_with(|| RatingRow {
            rater: rater.to_string(),
            cells: BTreeMap::new(),
        });
        row.cells
            .entry(item)
            .and_modify(|v| {
                if value.is_confusing() {
                    *v = value;
                }
            })
            .or_insert(value);
    }

    pub fn add_ratings(&mut self, ratings: &[ScreenRating]) {
        for r in ratings {
            let item = (r.app_name.clone(), r.task_id.clone(), r.screen.clone());
            self.insert(&r.rater_id(), item, r.binary);
        }
    }

    pub fn add_row(&mut self, row: RatingRow) {
        for (item, v) in row.cells {
            self.insert(&row.rater, item, v);
        }
    }

    pub fn raters(&self) -> Vec<&str> {
        self.rows.keys().map(String::as_str).collect()
    }

    /// Aligned vectors over items both raters rated.
    pub fn aligned(&self, a: &str, b: &str) -> (Vec<bool>, Vec<bool>) {
        let (Some(ra), Some(rb)) = (self.rows.get(a), self.rows.get(b)) else {
            return (Vec::new(), Vec::new());
        };
        ra.cells
            .iter()
            .filter_map(|(k, va)| rb.cells.get(k).map(|vb| (va.is_confusing(), vb.is_confusing())))
            .unzip()
    }
}

#[derive(Debug, Error)]
pub enum RaterError {
    #[error("rating {task}/{screen} failed: {cause}")]
    RatingFailed {
        task: String,
        screen: String,
        cause: RatingCause,
    },
    #[error("trace {0} carries no confusion ratings")]
    ModeMismatch(String),
    #[error("unknown screen {0:?}")]
    UnknownScreen(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Error)]
pub enum RatingCause {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("screen image unreadable: {0}")]
    Image(String),
}

static RATING_CALLS: AtomicU64 = AtomicU64::new(0);

/// Rates a single screen with no walkthrough history: one backend call with
/// the isolated-screen prompt and the screenshot.
///
/// The scripted backend is addressed with the key `"{task}/{screen}"`.
pub fn rate_without_context(
    graph: &AppGraph,
    screen_id: &str,
    task_id: &str,
    backend: &dyn AgentBackend,
    run_label: &str,
    prompts: &PromptSet,
) -> Result<ScreenRating, RaterError> {
    let task = graph
        .task(task_id)
        .map_err(|_| RaterError::UnknownTask(task_id.to_string()))?;
    let screen = graph
        .screen(screen_id)
        .ok_or_else(|| RaterError::UnknownScreen(screen_id.to_string()))?;
    let failed = |cause: RatingCause| RaterError::RatingFailed {
        task: task_id.to_string(),
        screen: screen_id.to_string(),
        cause,
    };
    let path = graph.base_dir().join(&screen.image);
    if !path.is_file() {
        return Err(failed(RatingCause::Image(path.display().to_string())));
    }
    let turns = [
        ChatTurn::system(prompts.render(TemplateId::WithoutContext, &task.description)?),
        ChatTurn::facilitator(
            "This is the screen.",
            vec![ImageRef { screen_id: screen_id.to_string(), path }],
        ),
    ];
    // Each call is its own conversation, so scripted cursors never carry over.
    let session_id = format!("rate-{}", RATING_CALLS.fetch_add(1, Ordering::Relaxed));
    let script_key = format!("{task_id}/{screen_id}");
    let raw = backend
        .complete(&ChatRequest { session_id: &session_id, script_key: &script_key, turns: &turns })
        .map_err(|e| failed(e.into()))?;
    let (rating, rationale) = parse_screen_rating(&raw).map_err(|e| failed(e.into()))?;
    Ok(ScreenRating::new(
        run_label,
        RatingMode::WithoutContext,
        graph.name(),
        task_id,
        screen_id,
        rating,
        rationale,
    ))
}

/// Rates every `(task, screen)` pair, at most `concurrency` calls at a time.
/// Results come back in input order.
pub fn rate_screens(
    graph: &AppGraph,
    items: &[(String, String)],
    backend: &dyn AgentBackend,
    run_label: &str,
    prompts: &PromptSet,
    concurrency: usize,
) -> Vec<Result<ScreenRating, RaterError>> {
    let width = concurrency.max(1);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(width) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(task, screen)| {
                    s.spawn(move || rate_without_context(graph, screen, task, backend, run_label, prompts))
                })
                .collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("rating thread panicked")));
        });
    }
    out
}

/// Inline ratings from a with-confusion trace, one per distinct screen, the
/// most severe rating winning. Ties keep the lexicographically smallest
/// rationale so the result does not depend on step order.
pub fn extract_with_context_ratings(trace: &SessionTrace) -> Result<Vec<ScreenRating>, RaterError> {
    let mut best: BTreeMap<&str, (ConfusionRating, &str)> = BTreeMap::new();
    if trace.with_confusion {
        for step in &trace.steps {
            let Some((rating, rationale)) = step.confusion() else { continue };
            best.entry(step.screen.as_str())
                .and_modify(|cur| {
                    if rating > cur.0 || (rating == cur.0 && rationale < cur.1) {
                        *cur = (rating, rationale);
                    }
                })
                .or_insert((rating, rationale));
        }
    }
    if best.is_empty() {
        return Err(RaterError::ModeMismatch(trace.session_id.clone()));
    }
    Ok(best
        .into_iter()
        .map(|(screen, (rating, rationale))| {
            ScreenRating::new(
                &trace.run_label,
                RatingMode::WithContext,
                &trace.app_name,
                &trace.task_id,
                screen,
                rating,
                rationale,
            )
        })
        .collect())
}

/// The human rater row from coded labels. Every label must name a task of
/// `graph` and a screen of the app.
pub fn human_failure_points(labels: &[HumanLabel], graph: &AppGraph) -> Result<RatingRow, RaterError> {
    let mut matrix = RatingMatrix::default();
    for l in labels {
        if graph.task(&l.task).is_err() {
            return Err(RaterError::UnknownTask(l.task.clone()));
        }
        if !graph.has_screen(&l.screen) {
            return Err(RaterError::UnknownScreen(l.screen.clone()));
        }
        let v = if l.confusing { BinaryRating::Confusing } else { BinaryRating::NotConfusing };
        matrix.insert(HUMAN_RATER, (graph.name().to_string(), l.task.clone(), l.screen.clone()), v);
    }
    Ok(matrix.rows.remove(HUMAN_RATER).unwrap_or_else(|| RatingRow {
        rater: HUMAN_RATER.to_string(),
        cells: BTreeMap::new(),
    }))
}

/// Distinct `(task, screen)` pairs visited in `traces`, in first-seen order.
pub fn visited_screens(traces: &[SessionTrace]) -> Vec<(String, String)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in traces {
        for s in t.path() {
            if seen.insert((t.task_id.clone(), s.clone())) {
                out.push((t.task_id.clone(), s));
            }
        }
    }
    out
}
