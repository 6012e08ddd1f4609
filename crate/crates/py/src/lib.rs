//! Python bindings for the walkthrough engine, protocol parser and metrics.
//!
//! Structured values (traces, findings, parsed replies) cross the boundary as
//! plain Python dicts and lists built from their JSON form.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use cogwalk_core::backend::{Script, ScriptedBackend};
use cogwalk_core::engine::{
    run_session, AgentKind, HumanStepInput, RunContext, SessionConfig, SessionMeta, SystemClock, TurnInput,
};
use cogwalk_core::graph::{load_app_graph, read_manifest, validate_graph};
use cogwalk_core::metrics::{self, Edge, PathDistribution};
use cogwalk_core::protocol::{self, ConfusionRating, MessageKind, PromptSet, ResponseMode};
use cogwalk_core::store;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any serializable value into Python objects through `json.loads`.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "AppGraph", module = "cogwalk", frozen)]
struct PyAppGraph {
    inner: Arc<cogwalk_core::graph::AppGraph>,
}

#[pymethods]
impl PyAppGraph {
    /// Loads and validates a manifest; raises ValueError on findings that
    /// make the graph unusable.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let g = load_app_graph(&path).map_err(value_error)?;
        Ok(Self { inner: Arc::new(g) })
    }

    /// Lists every finding in a manifest without rejecting it.
    #[staticmethod]
    fn validate_file(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
        let g = read_manifest(&path).map_err(|e| PyOSError::new_err(e.to_string()))?;
        to_py(py, &validate_graph(&g))
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn screen_ids(&self) -> Vec<String> {
        self.inner.screens().iter().map(|s| s.id.clone()).collect()
    }

    #[getter]
    fn task_ids(&self) -> Vec<String> {
        self.inner.tasks().iter().map(|t| t.id.clone()).collect()
    }

    fn task(&self, py: Python<'_>, task_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.task(task_id).map_err(value_error)?)
    }

    /// Canonical actions available on `screen_id`.
    fn available_actions(&self, screen_id: &str) -> PyResult<Vec<String>> {
        let ts = self.inner.available_transitions(screen_id).map_err(value_error)?;
        Ok(ts.into_iter().map(|t| t.action.clone()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "AppGraph(name={:?}, screens={}, tasks={})",
            self.inner.name(),
            self.inner.screens().len(),
            self.inner.tasks().len()
        )
    }
}

/// A walkthrough session driven one turn at a time, as the HTTP API does for
/// human participants.
#[pyclass(name = "Session", module = "cogwalk")]
struct PySession {
    inner: cogwalk_core::engine::Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (graph, task_id, participant_label = "python", with_confusion = false, probe = false))]
    fn new(
        graph: &PyAppGraph,
        task_id: &str,
        participant_label: &str,
        with_confusion: bool,
        probe: bool,
    ) -> PyResult<Self> {
        let meta = SessionMeta {
            session_id: format!("py-{participant_label}-{task_id}"),
            agent_kind: AgentKind::Human,
            backend_label: "human".into(),
            run_label: participant_label.to_string(),
        };
        let config = SessionConfig { with_confusion, probe, auto_complete_on_goal: false, ..SessionConfig::default() };
        let inner = cogwalk_core::engine::Session::new(
            graph.inner.clone(),
            task_id,
            config,
            meta,
            Arc::new(SystemClock),
        )
        .map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn current_screen(&self) -> String {
        self.inner.current_screen().to_string()
    }

    #[getter]
    fn is_open(&self) -> bool {
        self.inner.is_open()
    }

    fn available_actions(&self) -> Vec<(String, String)> {
        self.inner.available().into_iter().map(|t| (t.id(), t.action.clone())).collect()
    }

    /// Takes one turn. Returns a dict with `advanced`, `screen_id`,
    /// `messages` and, once the session ends, `outcome`.
    #[pyo3(signature = (action_text = None, transition_id = None, think_aloud = String::new(), confusion = None))]
    fn step(
        &mut self,
        py: Python<'_>,
        action_text: Option<String>,
        transition_id: Option<String>,
        think_aloud: String,
        confusion: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let confusion = confusion.map(|c| c.parse::<ConfusionRating>()).transpose().map_err(value_error)?;
        let input = HumanStepInput { action_text, transition_id, think_aloud, confusion };
        let report = self.inner.take_turn(TurnInput::from_human(input)).map_err(value_error)?;
        let messages: Vec<&str> = report
            .messages
            .iter()
            .filter(|m| m.kind != MessageKind::CompletionQuery)
            .map(|m| m.text.as_str())
            .collect();
        to_py(
            py,
            &serde_json::json!({
                "advanced": report.advanced,
                "screen_id": report.screen,
                "messages": messages,
                "outcome": report.outcome,
            }),
        )
    }

    /// Ends the session as completed; raises ValueError when not on a goal.
    fn complete(&mut self) -> PyResult<()> {
        self.inner.complete().map_err(value_error)
    }

    fn trace(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.trace())
    }

    /// The trace in its on-disk JSON lines form.
    fn trace_jsonl(&self) -> String {
        store::trace_to_jsonl(self.inner.trace())
    }
}

/// Runs one session against pre-authored replies and returns the trace.
#[pyfunction]
#[pyo3(signature = (graph, task_id, replies, with_confusion = false, label = "scripted"))]
fn run_scripted(
    py: Python<'_>,
    graph: &PyAppGraph,
    task_id: &str,
    replies: Vec<String>,
    with_confusion: bool,
    label: &str,
) -> PyResult<Py<PyAny>> {
    let backend = ScriptedBackend::new(label, Script::new().with(task_id, replies));
    let prompts = PromptSet::default();
    let ctx = RunContext {
        session_id: format!("{label}-{task_id}"),
        run_label: format!("{label}-run1"),
        agent_kind: AgentKind::Scripted,
        prompts: &prompts,
        clock: Arc::new(SystemClock),
    };
    let config = SessionConfig { with_confusion, ..SessionConfig::default() };
    let trace = run_session(graph.inner.clone(), task_id, &backend, config, ctx).map_err(value_error)?;
    to_py(py, &trace)
}

#[pyfunction]
#[pyo3(signature = (raw, with_confusion = false))]
fn parse_evaluator_response(py: Python<'_>, raw: &str, with_confusion: bool) -> PyResult<Py<PyAny>> {
    let mode = if with_confusion { ResponseMode::WithConfusion } else { ResponseMode::Plain };
    let r = protocol::parse_evaluator_response(raw, mode).map_err(value_error)?;
    to_py(py, &r)
}

/// Maps a three-level rating to "confusing" or "not_confusing".
#[pyfunction]
fn collapse_rating(py: Python<'_>, rating: &str) -> PyResult<Py<PyAny>> {
    let r = rating.parse::<ConfusionRating>().map_err(value_error)?;
    to_py(py, &r.collapse())
}

fn distribution(d: BTreeMap<(String, String), f64>) -> PyResult<PathDistribution> {
    if d.values().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(PyValueError::new_err("masses must be finite and non-negative"));
    }
    let mass: BTreeMap<Edge, f64> = d.into_iter().filter(|(_, v)| *v > 0.0).collect();
    Ok(PathDistribution { mass })
}

/// Base-2 JS divergence of two edge distributions given as
/// `{(from, to): mass}` dicts.
#[pyfunction]
fn js_divergence(p: BTreeMap<(String, String), f64>, q: BTreeMap<(String, String), f64>) -> PyResult<f64> {
    Ok(metrics::js_divergence(&distribution(p)?, &distribution(q)?))
}

#[pyfunction]
#[pyo3(signature = (observed, reference, alpha = 0.0))]
fn path_set_divergence(observed: Vec<Vec<String>>, reference: Vec<Vec<String>>, alpha: f64) -> PyResult<f64> {
    metrics::path_set_divergence(&observed, &reference, alpha).map_err(value_error)
}

fn truthy(xs: Vec<Bound<'_, PyAny>>) -> PyResult<Vec<bool>> {
    xs.iter().map(|x| x.is_truthy()).collect()
}

/// Cohen's kappa over two binary label sequences (any truthy values); None
/// when chance agreement is total.
#[pyfunction]
fn cohens_kappa(a: Vec<Bound<'_, PyAny>>, b: Vec<Bound<'_, PyAny>>) -> PyResult<Option<f64>> {
    metrics::cohens_kappa(&truthy(a)?, &truthy(b)?).map_err(value_error)
}

#[pyfunction]
fn corrected_odds_ratio(a: u64, b: u64, c: u64, d: u64) -> f64 {
    metrics::corrected_odds_ratio(a, b, c, d)
}

/// Reads every trace in `directory`. Returns `(traces, violations)`.
#[pyfunction]
fn load_traces(py: Python<'_>, directory: PathBuf) -> PyResult<(Py<PyAny>, Vec<String>)> {
    let loaded = store::load_traces(&directory).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let traces: Vec<_> = loaded.traces.into_iter().map(|(_, t)| t).collect();
    let violations = loaded.violations.iter().map(|v| v.to_string()).collect();
    Ok((to_py(py, &traces)?, violations))
}

#[pymodule]
fn cogwalk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FAILSAFE_MESSAGE", protocol::FAILSAFE_MESSAGE)?;
    m.add_class::<PyAppGraph>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(run_scripted, m)?)?;
    m.add_function(wrap_pyfunction!(parse_evaluator_response, m)?)?;
    m.add_function(wrap_pyfunction!(collapse_rating, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(path_set_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(corrected_odds_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(load_traces, m)?)?;
    Ok(())
}
