//! Resolves free-text actions against a screen's outgoing transitions.

use std::collections::BTreeSet;

use crate::graph::Transition;

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize_action(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tokens(normalized: &str) -> BTreeSet<&str> {
    normalized.split(' ').filter(|t| !t.is_empty()).collect()
}

/// Token-set Jaccard similarity of two normalized phrases.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Exact match on a label or synonym first, then the best Jaccard score at or
/// above `threshold`; ties go to the earlier candidate.
pub fn resolve_action<'a>(
    action_text: &str,
    candidates: &[&'a Transition],
    threshold: f64,
) -> Option<&'a Transition> {
    let action = normalize_action(action_text);
    if action.is_empty() {
        return None;
    }
    let phrases = |t: &Transition| -> Vec<String> {
        std::iter::once(&t.action)
            .chain(&t.synonyms)
            .map(|p| normalize_action(p))
            .collect()
    };
    if let Some(t) = candidates
        .iter()
        .find(|t| phrases(t).contains(&action))
    {
        return Some(t);
    }
    let mut best: Option<(f64, &'a Transition)> = None;
    for t in candidates {
        let score = phrases(t)
            .iter()
            .map(|p| jaccard(&action, p))
            .fold(0.0, f64::max);
        if score >= threshold && best.is_none_or(|(b, _)| score > b) {
            best = Some((score, t));
        }
    }
    best.map(|(_, t)| t)
}
