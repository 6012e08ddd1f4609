use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::agreement::{cohens_kappa, failure_crosstab};
use super::divergence::path_set_divergence;
use super::{completion_rate, MetricsError};
use crate::engine::{AgentKind, Outcome, SessionTrace};
use crate::graph::AppGraph;
use crate::rater::{
    extract_with_context_ratings, human_failure_points, HumanLabel, RaterError, RatingMatrix,
    ScreenRating, HUMAN_RATER,
};

/// Column order of `report.csv`.
pub const CSV_COLUMNS: [&str; 9] = ["section", "group", "app", "task", "rater_a", "rater_b", "metric", "value", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    AgentKind,
    BackendLabel,
    #[default]
    Run,
}

impl GroupBy {
    fn key(self, t: &SessionTrace) -> String {
        match self {
            Self::AgentKind => t.agent_kind.as_str().to_string(),
            Self::BackendLabel => t.backend_label.clone(),
            Self::Run => t.run_label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number(f64),
    NotAvailable,
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Number(x) => {
                let s = format!("{x:.6}");
                f.write_str(if s == "-0.000000" { "0.000000" } else { &s })
            }
            Self::NotAvailable => f.write_str("n/a"),
            Self::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub group: String,
    pub app: String,
    pub task: String,
    pub rater_a: String,
    pub rater_b: String,
    pub metric: String,
    pub value: Value,
    pub n: Option<usize>,
}

impl ReportRow {
    fn new(section: &str, metric: &str, value: Value, n: Option<usize>) -> Self {
        Self {
            section: section.into(),
            group: String::new(),
            app: String::new(),
            task: String::new(),
            rater_a: String::new(),
            rater_b: String::new(),
            metric: metric.into(),
            value,
            n,
        }
    }

    fn at(mut self, group: &str, app: &str, task: &str) -> Self {
        self.group = group.into();
        self.app = app.into();
        self.task = task.into();
        self
    }

    fn raters(mut self, a: &str, b: &str) -> Self {
        self.rater_a = a.into();
        self.rater_b = b.into();
        self
    }

    pub fn number(&self) -> Option<f64> {
        match self.value {
            Value::Number(x) => Some(x),
            _ => None,
        }
    }
}

pub struct ReportInputs<'a> {
    pub graphs: &'a [&'a AppGraph],
    pub traces: &'a [SessionTrace],
    /// Ratings loaded from ratings files.
    pub ratings: &'a [ScreenRating],
    pub human_labels: &'a [HumanLabel],
    pub group_by: GroupBy,
    pub alpha: f64,
    pub inputs: Vec<InputFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub inputs: Vec<InputFile>,
}

fn graph_for<'a>(graphs: &[&'a AppGraph], app: &str) -> Result<&'a AppGraph, MetricsError> {
    graphs
        .iter()
        .copied()
        .find(|g| g.name() == app)
        .ok_or_else(|| MetricsError::UnknownApp(app.to_string()))
}

fn human_matrix(graphs: &[&AppGraph], labels: &[HumanLabel]) -> Result<RatingMatrix, MetricsError> {
    let mut by_app: BTreeMap<&str, Vec<HumanLabel>> = BTreeMap::new();
    for l in labels {
        let owners: Vec<&AppGraph> = graphs.iter().copied().filter(|g| g.task(&l.task).is_ok()).collect();
        match owners.as_slice() {
            [] => return Err(RaterError::UnknownTask(l.task.clone()).into()),
            [g] => by_app.entry(g.name()).or_default().push(l.clone()),
            _ => return Err(MetricsError::AmbiguousTask(l.task.clone())),
        }
    }
    let mut m = RatingMatrix::default();
    for (app, ls) in by_app {
        m.add_row(human_failure_points(&ls, graph_for(graphs, app)?)?);
    }
    Ok(m)
}

/// Assembles every table of the report from already-loaded inputs.
pub fn build_report(inp: &ReportInputs<'_>) -> Result<MetricsReport, MetricsError> {
    for t in inp.traces {
        let g = graph_for(inp.graphs, &t.app_name)?;
        if g.task(&t.task_id).is_err() {
            return Err(MetricsError::UnknownTask { app: t.app_name.clone(), task: t.task_id.clone() });
        }
    }
    let mut rows = Vec::new();

    let mut by_app: BTreeMap<(String, String), Vec<SessionTrace>> = BTreeMap::new();
    let mut by_task: BTreeMap<(String, String, String), Vec<&SessionTrace>> = BTreeMap::new();
    for t in inp.traces {
        let g = inp.group_by.key(t);
        by_app.entry((g.clone(), t.app_name.clone())).or_default().push(t.clone());
        by_task.entry((g, t.app_name.clone(), t.task_id.clone())).or_default().push(t);
    }
    for ((group, app), ts) in &by_app {
        rows.push(
            ReportRow::new("completion", "completion_rate", Value::Number(completion_rate(ts)?), Some(ts.len()))
                .at(group, app, ""),
        );
    }
    for ((group, app, task), ts) in &by_task {
        let owned: Vec<SessionTrace> = ts.iter().map(|t| (*t).clone()).collect();
        rows.push(
            ReportRow::new("completion", "completion_rate", Value::Number(completion_rate(&owned)?), Some(ts.len()))
                .at(group, app, task),
        );
    }

    for ((group, app, task), ts) in &by_task {
        let steps: Vec<usize> = ts
            .iter()
            .filter(|t| t.outcome == Some(Outcome::Completed))
            .map(|t| t.steps.iter().filter(|s| s.resolved.is_some()).count())
            .collect();
        let mean = if steps.is_empty() {
            Value::NotAvailable
        } else {
            Value::Number(steps.iter().sum::<usize>() as f64 / steps.len() as f64)
        };
        rows.push(ReportRow::new("steps", "mean_steps", mean, Some(steps.len())).at(group, app, task));
    }

    let mut by_run: BTreeMap<(&str, &str, &str), Vec<Vec<String>>> = BTreeMap::new();
    for t in inp.traces {
        by_run
            .entry((t.run_label.as_str(), t.app_name.as_str(), t.task_id.as_str()))
            .or_default()
            .push(t.path());
    }
    for ((run, app, task), paths) in &by_run {
        let reference = &graph_for(inp.graphs, app)?.task(task).expect("checked above").correct_paths;
        let value = match path_set_divergence(paths, reference, inp.alpha) {
            Ok(d) => Value::Number(d),
            Err(MetricsError::EmptyPaths) => Value::NotAvailable,
            Err(e) => return Err(e),
        };
        rows.push(ReportRow::new("jsd", "jsd", value, Some(paths.len())).at(run, app, task));
    }

    let mut matrix = human_matrix(inp.graphs, inp.human_labels)?;
    matrix.add_ratings(inp.ratings);
    for t in inp.traces.iter().filter(|t| t.with_confusion && t.agent_kind != AgentKind::Human) {
        match extract_with_context_ratings(t) {
            Ok(rs) => matrix.add_ratings(&rs),
            Err(RaterError::ModeMismatch(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let raters = matrix.raters();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let (va, vb) = matrix.aligned(a, b);
            if va.is_empty() {
                continue;
            }
            let value = cohens_kappa(&va, &vb)?.map_or(Value::NotAvailable, Value::Number);
            rows.push(ReportRow::new("kappa", "kappa", value, Some(va.len())).raters(a, b));
        }
    }
    for r in raters.iter().filter(|r| **r != HUMAN_RATER) {
        let (llm, human) = matrix.aligned(r, HUMAN_RATER);
        if llm.is_empty() {
            continue;
        }
        let t = failure_crosstab(&llm, &human)?;
        let n = Some(llm.len());
        for (metric, v) in [("a", t.a), ("b", t.b), ("c", t.c), ("d", t.d)] {
            rows.push(ReportRow::new("crosstab", metric, Value::Number(v as f64), n).raters(r, HUMAN_RATER));
        }
        rows.push(ReportRow::new("crosstab", "odds_ratio", Value::Number(t.odds_ratio), n).raters(r, HUMAN_RATER));
    }

    Ok(MetricsReport { rows, inputs: inp.inputs.clone() })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl MetricsReport {
    pub fn section<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.section == name)
    }

    /// Comma-separated table with [`CSV_COLUMNS`]; input files appear as
    /// `input` rows carrying their SHA-256.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        let inputs = self.inputs.iter().map(|f| {
            let mut r = ReportRow::new("input", "sha256", Value::Text(f.sha256.clone()), None);
            r.group = f.name.clone();
            r
        });
        for r in inputs.chain(self.rows.iter().cloned()) {
            let n = r.n.map(|n| n.to_string()).unwrap_or_default();
            let fields = [
                &r.section, &r.group, &r.app, &r.task, &r.rater_a, &r.rater_b, &r.metric,
                &r.value.to_string(), &n,
            ];
            let line: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Readable Markdown rendering of the same numbers.
    pub fn to_summary_markdown(&self) -> String {
        let mut s = String::from("# Metrics report\n\n");
        let table = |s: &mut String, title: &str, head: &[&str], rows: Vec<Vec<String>>| {
            if rows.is_empty() {
                return;
            }
            let _ = writeln!(s, "## {title}\n");
            let _ = writeln!(s, "| {} |", head.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
            for r in rows {
                let _ = writeln!(s, "| {} |", r.join(" | "));
            }
            s.push('\n');
        };
        let cells = |r: &ReportRow| {
            vec![
                r.group.clone(),
                r.app.clone(),
                if r.task.is_empty() { "(all)".into() } else { r.task.clone() },
                r.value.to_string(),
                r.n.map(|n| n.to_string()).unwrap_or_default(),
            ]
        };
        table(
            &mut s,
            "Completion rate",
            &["group", "app", "task", "rate", "n"],
            self.section("completion").map(cells).collect(),
        );
        table(
            &mut s,
            "Steps to completion (completed sessions only)",
            &["group", "app", "task", "mean steps", "n"],
            self.section("steps").map(cells).collect(),
        );
        table(
            &mut s,
            "JS divergence against the correct-path set",
            &["run", "app", "task", "jsd", "sessions"],
            self.section("jsd").map(cells).collect(),
        );
        table(
            &mut s,
            "Cohen's kappa",
            &["rater a", "rater b", "kappa", "items"],
            self.section("kappa")
                .map(|r| {
                    vec![
                        r.rater_a.clone(),
                        r.rater_b.clone(),
                        r.value.to_string(),
                        r.n.map(|n| n.to_string()).unwrap_or_default(),
                    ]
                })
                .collect(),
        );
        let mut tabs: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in self.section("crosstab") {
            tabs.entry(&r.rater_a).or_default().insert(&r.metric, r.value.to_string());
            counts.insert(&r.rater_a, r.n.unwrap_or_default());
        }
        let order: BTreeSet<&str> = tabs.keys().copied().collect();
        table(
            &mut s,
            "Failure points against the human coding",
            &["rater", "a (both)", "b (rater only)", "c (human only)", "d (neither)", "odds ratio", "items"],
            order
                .into_iter()
                .map(|rater| {
                    let t = &tabs[rater];
                    let mut row = vec![rater.to_string()];
                    for m in ["a", "b", "c", "d", "odds_ratio"] {
                        let v = t.get(m).cloned().unwrap_or_default();
                        row.push(if m == "odds_ratio" { v } else { v.trim_end_matches(".000000").to_string() });
                    }
                    row.push(counts[rater].to_string());
                    row
                })
                .collect(),
        );
        if !self.inputs.is_empty() {
            s.push_str("## Inputs\n\n");
            for f in &self.inputs {
                let _ = writeln!(s, "- `{}` sha256 `{}`", f.name, f.sha256);
            }
        }
        s
    }
}
