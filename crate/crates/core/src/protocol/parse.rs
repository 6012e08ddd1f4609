//! Tolerant parsing of evaluator replies.
//!
//! Models wrap JSON in code fences or prose, and the prompt templates spell
//! keys inconsistently ("next_action" vs "confusing or not"), so keys are
//! compared after stripping case and punctuation.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Confidence, ConfusionRating, EvaluatorResponse, PossibleAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Plain,
    WithConfusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found: {0}")]
    NoJsonFound(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("confusion rating missing in with-confusion mode")]
    ModeMismatch,
}

const COMPLETION_PHRASES: &[&str] = &[
    "done",
    "complete",
    "completed",
    "task complete",
    "task completed",
    "task is complete",
    "task is completed",
    "the task is complete",
    "the task is completed",
    "task done",
    "i have completed the task",
];

const COMPLETION_KEYS: &[&str] = &[
    "declarescomplete",
    "taskcomplete",
    "taskcompleted",
    "iscomplete",
    "completed",
    "complete",
];

/// Lowercases and drops every non-alphanumeric character.
pub fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn normalize_phrase(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns the first balanced `{...}` span in `raw` that parses as a JSON
/// object. String literals are respected when balancing braces.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, ParseError> {
    let bytes = raw.as_bytes();
    let mut saw_brace = false;
    let mut last_err = String::new();
    for (start, _) in raw.match_indices('{') {
        saw_brace = true;
        let Some(end) = balanced_end(bytes, start) else {
            last_err = "unterminated object".into();
            continue;
        };
        match serde_json::from_str::<Value>(&raw[start..=end]) {
            Ok(Value::Object(map)) => return Ok(map),
            Ok(_) => {}
            Err(e) => last_err = e.to_string(),
        }
    }
    if saw_brace {
        Err(ParseError::NoJsonFound(last_err))
    } else {
        Err(ParseError::NoJsonFound("reply contains no '{'".into()))
    }
}

fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

struct Fields(Vec<(String, Value)>);

impl Fields {
    fn new(map: Map<String, Value>) -> Self {
        Self(map.into_iter().map(|(k, v)| (normalize_key(&k), v)).collect())
    }

    fn get(&self, names: &[&str]) -> Option<&Value> {
        names
            .iter()
            .find_map(|n| self.0.iter().find(|(k, _)| k == n).map(|(_, v)| v))
    }

    fn string(&self, names: &[&str]) -> Result<Option<String>, ParseError> {
        match self.get(names) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.trim().to_string())),
            Some(other) => Err(ParseError::SchemaViolation(format!(
                "{} must be a string, got {other}",
                names[0]
            ))),
        }
    }

    fn required(&self, names: &[&str]) -> Result<String, ParseError> {
        match self.string(names)? {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(ParseError::SchemaViolation(format!("missing field {}", names[0]))),
        }
    }
}

fn parse_possible_action(v: &Value) -> Result<PossibleAction, ParseError> {
    let Value::Object(map) = v else {
        return Err(ParseError::SchemaViolation(
            "possible_actions entries must be objects".into(),
        ));
    };
    let f = Fields::new(map.clone());
    let confidence = f
        .required(&["confidence"])?
        .parse::<Confidence>()
        .map_err(ParseError::SchemaViolation)?;
    Ok(PossibleAction {
        action: f.required(&["action"])?,
        rationale: f.required(&["rationale"])?,
        confidence,
    })
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Bool(b) => *b,
        Value::String(s) => matches!(normalize_phrase(s).as_str(), "yes" | "true" | "y"),
        _ => false,
    }
}

/// Parses one evaluator reply. Every input yields either a response that
/// satisfies the type invariants or a typed error.
pub fn parse_evaluator_response(
    raw: &str,
    mode: ResponseMode,
) -> Result<EvaluatorResponse, ParseError> {
    let fields = Fields::new(extract_json_object(raw)?);

    let possible_actions = match fields.get(&["possibleactions"]) {
        Some(Value::Array(items)) => items
            .iter()
            .map(parse_possible_action)
            .collect::<Result<Vec<_>, _>>()?,
        Some(obj @ Value::Object(_)) => vec![parse_possible_action(obj)?],
        Some(_) => {
            return Err(ParseError::SchemaViolation(
                "possible_actions must be an object or a list".into(),
            ))
        }
        None => Vec::new(),
    };
    if possible_actions.is_empty() {
        return Err(ParseError::SchemaViolation("missing field possible_actions".into()));
    }

    let next_action = fields.required(&["nextaction"])?;
    let next_action_rationale = fields
        .string(&["nextactionrationale", "nextactionrationle"])?
        .unwrap_or_default();
    let current_state = fields.string(&["currentstate"])?.unwrap_or_default();

    let (confusion, confusion_rationale) = match mode {
        ResponseMode::Plain => (None, None),
        ResponseMode::WithConfusion => {
            let rating = fields
                .string(&["confusingornot", "confusion", "confusionrating"])?
                .filter(|s| !s.is_empty())
                .ok_or(ParseError::ModeMismatch)?;
            let rating = rating
                .parse::<ConfusionRating>()
                .map_err(ParseError::SchemaViolation)?;
            let rationale = fields.required(&["confusingornotrationale", "confusionrationale"])?;
            (Some(rating), Some(rationale))
        }
    };

    let flagged = COMPLETION_KEYS
        .iter()
        .any(|k| fields.get(&[k]).is_some_and(truthy));
    let phrase = normalize_phrase(&next_action);
    let declares_complete = flagged || COMPLETION_PHRASES.contains(&phrase.as_str());

    Ok(EvaluatorResponse {
        current_state,
        possible_actions,
        next_action,
        next_action_rationale,
        confusion,
        confusion_rationale,
        declares_complete,
    })
}

/// Parses a reply to the isolated-screen rating prompt into the rating and
/// its rationale.
pub fn parse_screen_rating(raw: &str) -> Result<(ConfusionRating, String), ParseError> {
    let fields = Fields::new(extract_json_object(raw)?);
    let rating = fields
        .required(&["confusingornot", "confusion", "confusionrating"])?
        .parse::<ConfusionRating>()
        .map_err(ParseError::SchemaViolation)?;
    let rationale = fields
        .string(&["confusingornotrationale", "confusionrationale", "rationale"])?
        .unwrap_or_default();
    Ok((rating, rationale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FENCED: &str = r#"Sure, here is my analysis.
```json
{
  "current_state": "Home screen with a bottom tab bar",
  "possible_actions": [
    {"action": "tap lessons tab", "rationale": "lessons are listed there", "confidence": "High"},
    {"action": "tap profile icon", "rationale": "maybe settings", "confidence": "low"}
  ],
  "next_action": "tap lessons tab",
  "next_action_rationle": "the lesson list should contain a food lesson"
}
```"#;

    #[test]
    fn fenced_json_with_mixed_case_confidence() {
        let r = parse_evaluator_response(FENCED, ResponseMode::Plain).unwrap();
        assert_eq!(r.possible_actions[0].confidence, Confidence::High);
        assert_eq!(r.possible_actions.len(), 2);
        assert_eq!(r.next_action, "tap lessons tab");
        assert!(r.next_action_rationale.starts_with("the lesson list"));
        assert!(!r.declares_complete);
        assert!(r.confusion.is_none());
    }

    #[test]
    fn no_braces() {
        assert!(matches!(
            parse_evaluator_response("I would tap the lessons tab.", ResponseMode::Plain),
            Err(ParseError::NoJsonFound(_))
        ));
    }

    #[test]
    fn with_confusion_requires_rating() {
        let err = parse_evaluator_response(FENCED, ResponseMode::WithConfusion).unwrap_err();
        assert_eq!(err, ParseError::ModeMismatch);
    }

    #[test]
    fn spaced_keys_and_single_object_actions() {
        let raw = r#"{"Current State": "settings", "possible actions": {"action": "tap notifications",
            "rationale": "reminders live there", "confidence": "MEDIUM"},
            "next action": "tap notifications", "next action rationale": "it is the reminder section",
            "confusing or not": "Slightly confusing", "confusing or not rationale": "many toggles"}"#;
        let r = parse_evaluator_response(raw, ResponseMode::WithConfusion).unwrap();
        assert_eq!(r.confusion, Some(ConfusionRating::Slightly));
        assert_eq!(r.confusion_rationale.as_deref(), Some("many toggles"));
        assert_eq!(r.possible_actions[0].confidence, Confidence::Medium);
        assert_eq!(r.current_state, "settings");
    }

    #[test]
    fn completion_detection() {
        let base = |next: &str, extra: &str| {
            format!(
                r#"{{"possible_actions": [{{"action": "x", "rationale": "y", "confidence": "low"}}],
                "next_action": "{next}"{extra}}}"#
            )
        };
        for phrase in ["Task complete.", "done", "The task is completed!"] {
            let r = parse_evaluator_response(&base(phrase, ""), ResponseMode::Plain).unwrap();
            assert!(r.declares_complete, "{phrase}");
        }
        let r = parse_evaluator_response(&base("stay here", r#", "task_completed": true"#), ResponseMode::Plain)
            .unwrap();
        assert!(r.declares_complete);
        let r = parse_evaluator_response(&base("tap done button", ""), ResponseMode::Plain).unwrap();
        assert!(!r.declares_complete);
    }

    #[test]
    fn screen_rating_replies() {
        let (r, why) = parse_screen_rating(
            r#"{"confusing or not": "Slightly confusing", "confusing or not rationale": "two similar tabs"}"#,
        )
        .unwrap();
        assert_eq!(r, ConfusionRating::Slightly);
        assert_eq!(why, "two similar tabs");
        assert!(matches!(parse_screen_rating("looks fine to me"), Err(ParseError::NoJsonFound(_))));
        assert!(matches!(
            parse_screen_rating(r#"{"confusing or not": "meh"}"#),
            Err(ParseError::SchemaViolation(_))
        ));
    }

    #[test]
    fn skips_non_json_braces() {
        let raw = r#"Options {a, b} considered. {"possible_actions": [{"action": "a", "rationale": "b", "confidence": "high"}], "next_action": "a"}"#;
        let r = parse_evaluator_response(raw, ResponseMode::Plain).unwrap();
        assert_eq!(r.next_action, "a");
    }

    #[test]
    fn bad_enums_and_missing_fields() {
        let bad_conf = r#"{"possible_actions": [{"action": "a", "rationale": "b", "confidence": "certain"}], "next_action": "a"}"#;
        assert!(matches!(
            parse_evaluator_response(bad_conf, ResponseMode::Plain),
            Err(ParseError::SchemaViolation(_))
        ));
        let no_next = r#"{"possible_actions": [{"action": "a", "rationale": "b", "confidence": "high"}]}"#;
        assert!(matches!(
            parse_evaluator_response(no_next, ResponseMode::Plain),
            Err(ParseError::SchemaViolation(_))
        ));
        let truncated = r#"{"possible_actions": [{"action": "a""#;
        assert!(matches!(
            parse_evaluator_response(truncated, ResponseMode::Plain),
            Err(ParseError::NoJsonFound(_))
        ));
    }

    fn arb_response(with_confusion: bool) -> impl Strategy<Value = EvaluatorResponse> {
        let text = "[a-zA-Z][a-zA-Z0-9 ,.'\"{}]{0,30}";
        let action = (text, text, prop_oneof![
            Just(Confidence::Low),
            Just(Confidence::Medium),
            Just(Confidence::High)
        ])
            .prop_map(|(a, r, c)| PossibleAction {
                action: a.trim().to_string(),
                rationale: r.trim().to_string(),
                confidence: c,
            })
            .prop_filter("non-empty", |p| !p.action.is_empty() && !p.rationale.is_empty());
        let rating = prop_oneof![
            Just(ConfusionRating::NotAtAll),
            Just(ConfusionRating::Slightly),
            Just(ConfusionRating::Very)
        ];
        (
            text,
            proptest::collection::vec(action, 1..4),
            text,
            text,
            rating,
            text,
            any::<bool>(),
        )
            .prop_map(move |(state, actions, next, why, rating, crat, done)| EvaluatorResponse {
                current_state: state.trim().to_string(),
                possible_actions: actions,
                next_action: next.trim().to_string(),
                next_action_rationale: why.trim().to_string(),
                confusion: with_confusion.then_some(rating),
                confusion_rationale: with_confusion.then(|| crat.trim().to_string()),
                declares_complete: done,
            })
            .prop_filter("non-empty", |r| {
                !r.next_action.is_empty()
                    && r.confusion_rationale.as_deref().is_none_or(|s| !s.is_empty())
            })
    }

    proptest! {
        #[test]
        fn reserialization_is_stable(r in arb_response(true), wrap in any::<bool>()) {
            let json = serde_json::to_string(&r).unwrap();
            let raw = if wrap { format!("Here you go:\n```json\n{json}\n```\nThanks") } else { json };
            let parsed = parse_evaluator_response(&raw, ResponseMode::WithConfusion).unwrap();
            let again = parse_evaluator_response(&serde_json::to_string(&parsed).unwrap(), ResponseMode::WithConfusion).unwrap();
            prop_assert_eq!(&parsed, &again);
            prop_assert_eq!(parsed.confusion, r.confusion);
            prop_assert_eq!(&parsed.possible_actions, &r.possible_actions);
        }

        #[test]
        fn parse_is_total(raw in ".{0,200}") {
            for mode in [ResponseMode::Plain, ResponseMode::WithConfusion] {
                if let Ok(r) = parse_evaluator_response(&raw, mode) {
                    prop_assert!(!r.next_action.is_empty());
                    prop_assert!(!r.possible_actions.is_empty());
                    prop_assert_eq!(r.confusion.is_some(), mode == ResponseMode::WithConfusion);
                }
            }
        }
    }
}
