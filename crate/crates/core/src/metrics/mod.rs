//! Quantitative measures over traces and ratings, and report assembly.

mod agreement;
mod divergence;
mod report;

use thiserror::Error;

use crate::engine::{Outcome, SessionTrace};
use crate::rater::RaterError;

pub use agreement::{
    cohens_kappa, corrected_odds_ratio, failure_crosstab, kappa_result, CrossTab, KappaResult,
};
pub use divergence::{
    edges_of, js_divergence, js_divergence_strict, path_distribution, path_set_divergence, Edge,
    PathDistribution,
};
pub use report::{build_report, GroupBy, InputFile, MetricsReport, ReportInputs, ReportRow, Value, CSV_COLUMNS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no input items")]
    EmptyInput,
    #[error("no navigation edges in the given paths")]
    EmptyPaths,
    #[error("support edge {0:?} has zero mass; use alpha > 0")]
    ZeroMassSupport(Edge),
    #[error("smoothing alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("distributions have different supports")]
    SupportMismatch,
    #[error("rating vectors differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("no app manifest named {0:?}")]
    UnknownApp(String),
    #[error("app {app:?} has no task {task:?}")]
    UnknownTask { app: String, task: String },
    #[error("task {0:?} exists in several apps; labels cannot be attributed")]
    AmbiguousTask(String),
    #[error(transparent)]
    Rater(#[from] RaterError),
}

/// Share of traces whose outcome is `completed`.
pub fn completion_rate(traces: &[SessionTrace]) -> Result<f64, MetricsError> {
    if traces.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let done = traces
        .iter()
        .filter(|t| t.outcome == Some(Outcome::Completed))
        .count();
    Ok(done as f64 / traces.len() as f64)
}
