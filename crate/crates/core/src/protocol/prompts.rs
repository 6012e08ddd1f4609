use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TASK_PLACEHOLDER: &str = "[Task description]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Facilitator,
    EvaluatorPlain,
    EvaluatorWithConfusion,
    WithoutContext,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        Self::Facilitator,
        Self::EvaluatorPlain,
        Self::EvaluatorWithConfusion,
        Self::WithoutContext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Facilitator => "facilitator",
            Self::EvaluatorPlain => "evaluator_plain",
            Self::EvaluatorWithConfusion => "evaluator_with_confusion",
            Self::WithoutContext => "without_context",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("task description is empty")]
    EmptyTask,
    #[error("cannot read prompt file {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt file {0} lacks the [Task description] placeholder")]
    MissingPlaceholder(PathBuf),
}

/// The four prompt templates. Defaults are the files under `prompts/` in this
/// crate; [`PromptSet::load_dir`] swaps in an edited copy at runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    facilitator: String,
    evaluator_plain: String,
    evaluator_with_confusion: String,
    without_context: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            facilitator: include_str!("../../prompts/facilitator.txt").to_string(),
            evaluator_plain: include_str!("../../prompts/evaluator_plain.txt").to_string(),
            evaluator_with_confusion: include_str!("../../prompts/evaluator_with_confusion.txt")
                .to_string(),
            without_context: include_str!("../../prompts/without_context.txt").to_string(),
        }
    }
}

impl PromptSet {
    /// Loads `<id>.txt` for every template id from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |id: TemplateId| -> Result<String, PromptError> {
            let path = dir.join(id.file_name());
            let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.clone(),
                source,
            })?;
            if !text.contains(TASK_PLACEHOLDER) {
                return Err(PromptError::MissingPlaceholder(path));
            }
            Ok(text)
        };
        Ok(Self {
            facilitator: read(TemplateId::Facilitator)?,
            evaluator_plain: read(TemplateId::EvaluatorPlain)?,
            evaluator_with_confusion: read(TemplateId::EvaluatorWithConfusion)?,
            without_context: read(TemplateId::WithoutContext)?,
        })
    }

    /// Raw template text, trailing newline trimmed.
    pub fn template(&self, id: TemplateId) -> &str {
        let raw = match id {
            TemplateId::Facilitator => &self.facilitator,
            TemplateId::EvaluatorPlain => &self.evaluator_plain,
            TemplateId::EvaluatorWithConfusion => &self.evaluator_with_confusion,
            TemplateId::WithoutContext => &self.without_context,
        };
        raw.trim_end_matches(['\n', '\r'])
    }

    pub fn render(&self, id: TemplateId, task_description: &str) -> Result<String, PromptError> {
        if task_description.trim().is_empty() {
            return Err(PromptError::EmptyTask);
        }
        Ok(self.template(id).replace(TASK_PLACEHOLDER, task_description))
    }
}

/// Renders a default template by name.
pub fn render_prompt(template_id: &str, task_description: &str) -> Result<String, PromptError> {
    let id: TemplateId = template_id.parse()?;
    PromptSet::default().render(id, task_description)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluator_prompt_embeds_task_verbatim() {
        let p = render_prompt("evaluator_plain", "find a podcast related to German").unwrap();
        assert!(p.starts_with("You are helping with a cognitive walkthrough."));
        assert!(p.contains("a user task: find a podcast related to German. Your job"));
        assert!(!p.contains(TASK_PLACEHOLDER));
    }

    #[test]
    fn without_context_asks_only_for_rating_pair() {
        let p = render_prompt("without_context", "find a lesson").unwrap();
        assert!(p.contains("{confusing or not: <string>, confusing or not rationale: <string>}"));
        assert!(!p.contains("next_action"));
        assert!(!p.contains("possible actions"));
    }

    #[test]
    fn facilitator_and_with_confusion_templates() {
        let p = render_prompt("facilitator", "t").unwrap();
        assert!(p.starts_with("You are a facilitator for a cognitive walkthrough."));
        let p = render_prompt("evaluator_with_confusion", "t").unwrap();
        assert!(p.contains("Provide the confusion rating on the following scale"));
        assert!(p.contains("confusing or not rationale: <string>"));
    }

    #[test]
    fn errors() {
        assert!(matches!(render_prompt("facilitator", ""), Err(PromptError::EmptyTask)));
        assert!(matches!(render_prompt("facilitator", "  "), Err(PromptError::EmptyTask)));
        assert!(matches!(render_prompt("nope", "x"), Err(PromptError::UnknownTemplate(_))));
    }

    #[test]
    fn only_placeholder_changes() {
        let set = PromptSet::default();
        for id in TemplateId::ALL {
            let t = set.template(id);
            let r = set.render(id, "XYZ").unwrap();
            assert_eq!(r.replace("XYZ", TASK_PLACEHOLDER), t);
        }
    }

    #[test]
    fn load_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let set = PromptSet::default();
        for id in TemplateId::ALL {
            std::fs::write(dir.path().join(id.file_name()), set.template(id)).unwrap();
        }
        assert_eq!(PromptSet::load_dir(dir.path()).unwrap().template(TemplateId::Facilitator),
            set.template(TemplateId::Facilitator));
        std::fs::write(dir.path().join("facilitator.txt"), "no placeholder").unwrap();
        assert!(matches!(
            PromptSet::load_dir(dir.path()),
            Err(PromptError::MissingPlaceholder(_))
        ));
    }
}
