//! Turn formats exchanged between the facilitator and the evaluator.

mod parse;
mod prompts;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use parse::{
    extract_json_object, normalize_key, parse_evaluator_response, parse_screen_rating, ParseError,
    ResponseMode,
};
pub use prompts::{render_prompt, PromptError, PromptSet, TemplateId, TASK_PLACEHOLDER};

/// Fixed facilitator sentence sent whenever an action cannot be resolved or
/// the evaluator is looping.
pub const FAILSAFE_MESSAGE: &str = "The action you provided/identified is not available on the screen. Consider trying a different action here. Please revise your action.";

/// Sent once after an unparseable evaluator reply.
pub const PARSE_REPAIR_MESSAGE: &str =
    "Your last reply was not valid JSON in the required format; resend only the JSON object.";

pub const PROBE_MESSAGE: &str =
    "Why would you take that action, and how does it help you complete the task? Please explain your reasoning.";

pub const COMPLETION_QUERY_MESSAGE: &str = "Have you completed the task?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl FromStr for Confidence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("confidence must be low, medium or high (got {other:?})")),
        }
    }
}

/// Three-level confusion scale. Ordering follows severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionRating {
    NotAtAll,
    Slightly,
    Very,
}

impl ConfusionRating {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NotAtAll => "not_at_all",
            Self::Slightly => "slightly",
            Self::Very => "very",
        }
    }

    pub fn collapse(self) -> BinaryRating {
        collapse_rating(self)
    }
}

impl fmt::Display for ConfusionRating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfusionRating {
    type Err = String;

    /// Accepts the canonical tokens as well as the scale phrases the prompts
    /// ask for ("not at all confusing", "Slightly confusing: ...").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
            .collect();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        let starts = |p: &str| norm == p || norm.starts_with(&format!("{p} "));
        if starts("not at all") || starts("not confusing") || norm == "none" {
            Ok(Self::NotAtAll)
        } else if starts("slightly") {
            Ok(Self::Slightly)
        } else if starts("very") {
            Ok(Self::Very)
        } else {
            Err(format!("unrecognized confusion rating {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryRating {
    Confusing,
    NotConfusing,
}

impl BinaryRating {
    pub fn is_confusing(self) -> bool {
        self == Self::Confusing
    }
}

/// Folds the three-level scale into a binary failure-point indicator:
/// only "not at all" counts as not confusing.
pub fn collapse_rating(r: ConfusionRating) -> BinaryRating {
    match r {
        ConfusionRating::NotAtAll => BinaryRating::NotConfusing,
        ConfusionRating::Slightly | ConfusionRating::Very => BinaryRating::Confusing,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PossibleAction {
    pub action: String,
    pub rationale: String,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorResponse {
    pub current_state: String,
    pub possible_actions: Vec<PossibleAction>,
    pub next_action: String,
    pub next_action_rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionRating>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion_rationale: Option<String>,
    #[serde(default)]
    pub declares_complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    TaskIntro,
    Probe,
    Failsafe,
    CompletionQuery,
    ParseRepair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilitatorMessage {
    pub kind: MessageKind,
    pub text: String,
}

impl FacilitatorMessage {
    pub fn task_intro(task_description: &str) -> Self {
        Self {
            kind: MessageKind::TaskIntro,
            text: format!(
                "Task: {task_description}\nThis is the start screen. Which component would you interact with next, and why? Respond in the required JSON format."
            ),
        }
    }

    pub fn failsafe() -> Self {
        Self {
            kind: MessageKind::Failsafe,
            text: FAILSAFE_MESSAGE.to_string(),
        }
    }

    pub fn parse_repair() -> Self {
        Self {
            kind: MessageKind::ParseRepair,
            text: PARSE_REPAIR_MESSAGE.to_string(),
        }
    }

    pub fn probe() -> Self {
        Self {
            kind: MessageKind::Probe,
            text: PROBE_MESSAGE.to_string(),
        }
    }

    pub fn completion_query() -> Self {
        Self {
            kind: MessageKind::CompletionQuery,
            text: COMPLETION_QUERY_MESSAGE.to_string(),
        }
    }
}
