//! The facilitator: runs one walkthrough session over an app graph.
//!
//! [`Session`] is the turn-by-turn state machine shared by LLM and human
//! sessions; [`run_session`] drives it with an [`AgentBackend`](crate::backend::AgentBackend).

mod loops;
mod matcher;
mod runner;
mod session;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Task, Transition};
use crate::protocol::{ConfusionRating, EvaluatorResponse, FacilitatorMessage, PromptError};

pub use loops::{detect_loop, detect_loop_probes, ends_in_cycle, repeats_in_place, LoopProbe};
pub use matcher::{jaccard, normalize_action, resolve_action};
pub use runner::{run_session, RunContext};
pub use session::{ActionChoice, Session, SessionMeta, StepReport, TurnInput};

/// Rationales shorter than this trigger a "why and how" probe.
pub const PROBE_MIN_RATIONALE_CHARS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_steps: usize,
    pub stuck_limit: usize,
    pub with_confusion: bool,
    pub match_threshold: f64,
    pub loop_window: usize,
    /// Keep only this many most recent turns (plus the prompt and task
    /// introduction) when calling the backend. `None` forwards everything.
    pub history_limit: Option<usize>,
    /// Reaching a goal screen ends the session without waiting for the
    /// evaluator to declare completion.
    pub auto_complete_on_goal: bool,
    /// Probe terse rationales.
    pub probe: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_steps: 60,
            stuck_limit: 5,
            with_confusion: false,
            match_threshold: 0.5,
            loop_window: 6,
            history_limit: None,
            auto_complete_on_goal: true,
            probe: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.max_steps < 1 {
            return bad("max_steps must be >= 1");
        }
        if self.stuck_limit < 1 {
            return bad("stuck_limit must be >= 1");
        }
        if self.loop_window < 4 {
            return bad("loop_window must be >= 4");
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return bad("match_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Llm,
    Scripted,
    Human,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Scripted => "scripted",
            Self::Human => "human",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    AbortedStuck,
    AbortedMaxSteps,
    AbortedError,
}

/// A human participant's turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanStepInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_id: Option<String>,
    #[serde(default)]
    pub think_aloud: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionRating>,
}

impl HumanStepInput {
    pub fn check(&self, with_confusion: bool) -> Result<(), EngineError> {
        let text = self.action_text.as_deref().is_some_and(|s| !s.trim().is_empty());
        if text == self.transition_id.is_some() {
            return Err(EngineError::InvalidInput(
                "exactly one of action_text or transition_id is required".into(),
            ));
        }
        if with_confusion && self.confusion.is_none() {
            return Err(EngineError::InvalidInput(
                "a confusion rating is required in with-confusion sessions".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: usize,
    /// Screen shown when the turn was taken.
    pub screen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<EvaluatorResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_input: Option<HumanStepInput>,
    /// Raw backend replies for this turn (two when a repair was needed).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_responses: Vec<String>,
    pub resolved: Option<Transition>,
    pub failsafe: bool,
    #[serde(default)]
    pub loop_detected: bool,
    #[serde(default)]
    pub facilitator_messages: Vec<FacilitatorMessage>,
}

impl TraceStep {
    /// The action this turn asked for, whichever agent produced it.
    pub fn action_text(&self) -> Option<&str> {
        if let Some(r) = &self.response {
            return Some(&r.next_action);
        }
        let h = self.human_input.as_ref()?;
        h.action_text.as_deref().or(h.transition_id.as_deref())
    }

    /// Confusion rating and its rationale, if the turn carried one.
    pub fn confusion(&self) -> Option<(ConfusionRating, &str)> {
        if let Some(r) = &self.response {
            return r
                .confusion
                .map(|c| (c, r.confusion_rationale.as_deref().unwrap_or_default()));
        }
        let h = self.human_input.as_ref()?;
        h.confusion.map(|c| (c, h.think_aloud.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub session_id: String,
    pub agent_kind: AgentKind,
    pub backend_label: String,
    /// Groups sessions into runs ("gpt-run1", a participant label, ...).
    pub run_label: String,
    pub task_id: String,
    pub app_name: String,
    pub with_confusion: bool,
    pub start_screen: String,
    pub steps: Vec<TraceStep>,
    /// `None` while the session is still open.
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
}

impl SessionTrace {
    /// Visited screens, starting with the start screen.
    pub fn path(&self) -> Vec<String> {
        std::iter::once(self.start_screen.clone())
            .chain(self.steps.iter().filter_map(|s| s.resolved.as_ref().map(|t| t.to.clone())))
            .collect()
    }

    pub fn final_screen(&self) -> &str {
        self.steps
            .iter()
            .rev()
            .find_map(|s| s.resolved.as_ref().map(|t| t.to.as_str()))
            .unwrap_or(&self.start_screen)
    }

    pub fn failsafe_count(&self) -> usize {
        self.steps.iter().filter(|s| s.failsafe).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOutcomeSummary {
    pub task_id: String,
    pub completed: bool,
    pub resolved_step_count: usize,
    pub path: Vec<String>,
}

/// Counts navigation steps; fail-safe turns do not move and are not counted.
pub fn summarize(trace: &SessionTrace, task: &Task) -> Result<SessionOutcomeSummary, EngineError> {
    if trace.task_id != task.id {
        return Err(EngineError::TaskMismatch {
            trace: trace.task_id.clone(),
            task: task.id.clone(),
        });
    }
    Ok(SessionOutcomeSummary {
        task_id: task.id.clone(),
        completed: trace.outcome == Some(Outcome::Completed),
        resolved_step_count: trace.steps.iter().filter(|s| s.resolved.is_some()).count(),
        path: trace.path(),
    })
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("task {task:?} is not part of app {app:?}")]
    GraphTaskMismatch { app: String, task: String },
    #[error("trace is for task {trace:?}, not {task:?}")]
    TaskMismatch { trace: String, task: String },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("not on a goal screen (current screen {0:?})")]
    NotOnGoal(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Source of trace timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always returns the same instant; used for reproducible trace files.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}
