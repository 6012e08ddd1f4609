//! Loop detection over a sliding window of steps.

use super::matcher::normalize_action;
use super::TraceStep;

/// What the detector needs from one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopProbe {
    pub screen: String,
    /// Normalized action text.
    pub action: String,
    /// Whether the step changed screens.
    pub moved: bool,
}

impl From<&TraceStep> for LoopProbe {
    fn from(step: &TraceStep) -> Self {
        Self {
            screen: step.screen.clone(),
            action: normalize_action(step.action_text().unwrap_or_default()),
            moved: step.resolved.is_some(),
        }
    }
}

/// True when the deduplicated screen sequence ends with a cycle of length 2
/// or 3 repeated twice in a row.
pub fn ends_in_cycle<S: AsRef<str>>(screens: &[S]) -> bool {
    let mut seq: Vec<&str> = Vec::with_capacity(screens.len());
    for s in screens {
        if seq.last() != Some(&s.as_ref()) {
            seq.push(s.as_ref());
        }
    }
    (2..=3).any(|len| {
        seq.len() >= 2 * len && {
            let tail = &seq[seq.len() - 2 * len..];
            tail[..len] == tail[len..]
        }
    })
}

/// True when two consecutive probes repeat the same normalized action on the
/// same screen and the first of them went nowhere.
pub fn repeats_in_place(window: &[LoopProbe]) -> bool {
    window.windows(2).any(|w| {
        !w[0].moved && w[0].screen == w[1].screen && !w[0].action.is_empty() && w[0].action == w[1].action
    })
}

pub fn detect_loop_probes(window: &[LoopProbe]) -> bool {
    let screens: Vec<&str> = window.iter().map(|p| p.screen.as_str()).collect();
    ends_in_cycle(&screens) || repeats_in_place(window)
}

/// Checks a window of recorded steps.
pub fn detect_loop(recent_steps: &[TraceStep]) -> bool {
    let probes: Vec<LoopProbe> = recent_steps.iter().map(LoopProbe::from).collect();
    detect_loop_probes(&probes)
}
