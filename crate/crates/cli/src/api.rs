//! JSON-over-HTTP API driving human walkthrough sessions.
//!
//! Each session is a [`Session`] behind its own mutex, so concurrent steps on
//! one session are applied one at a time while different sessions proceed
//! independently.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use cogwalk_core::engine::{
    AgentKind, Clock, EngineError, HumanStepInput, Outcome, Session, SessionConfig, SessionMeta,
    SessionTrace, SystemClock, TraceStep, TurnInput,
};
use cogwalk_core::graph::AppGraph;
use cogwalk_core::protocol::MessageKind;
use cogwalk_core::store::persist_trace;

pub struct ApiState {
    graph: Arc<AppGraph>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
    traces_out: Option<PathBuf>,
    probe_humans: bool,
    clock: Arc<dyn Clock>,
}

impl ApiState {
    pub fn new(graph: AppGraph, traces_out: Option<PathBuf>, probe_humans: bool) -> Self {
        Self::with_clock(graph, traces_out, probe_humans, Arc::new(SystemClock))
    }

    pub fn with_clock(
        graph: AppGraph,
        traces_out: Option<PathBuf>,
        probe_humans: bool,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            graph: Arc::new(graph),
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
            traces_out,
            probe_humans,
            clock,
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))
    }

    /// Writes a closed session's trace when a trace directory is configured.
    fn persist(&self, trace: &SessionTrace) -> Result<Option<String>, ApiError> {
        match &self.traces_out {
            Some(dir) => persist_trace(trace, dir)
                .map(|p| Some(p.display().to_string()))
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io_failure", e.to_string())),
            None => Ok(None),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match &e {
            EngineError::SessionClosed => (StatusCode::CONFLICT, "session_closed"),
            EngineError::NotOnGoal(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_on_goal"),
            EngineError::InvalidInput(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            EngineError::GraphTaskMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_task"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Path of a screen image; `#` and other reserved characters are escaped.
pub fn image_url(screen_id: &str) -> String {
    let mut out = String::from("/api/screens/");
    for b in screen_id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub task_id: String,
    pub participant_label: String,
    #[serde(default)]
    pub with_confusion: bool,
}

#[derive(Debug, Serialize)]
struct Created {
    session_id: String,
    screen_id: String,
    image_url: String,
    task_description: String,
}

async fn create_session(
    State(st): State<Arc<ApiState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body?;
    let label = req.participant_label.trim();
    if label.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", "participant_label is empty"));
    }
    let n = st.counter.fetch_add(1, Ordering::Relaxed) + 1;
    let meta = SessionMeta {
        session_id: format!("human-{n:04}-{}", req.task_id),
        agent_kind: AgentKind::Human,
        backend_label: "human".into(),
        run_label: label.to_string(),
    };
    let config = SessionConfig {
        with_confusion: req.with_confusion,
        auto_complete_on_goal: false,
        probe: st.probe_humans,
        ..SessionConfig::default()
    };
    let session = Session::new(st.graph.clone(), &req.task_id, config, meta, st.clock.clone())?;
    let created = Created {
        session_id: session.trace().session_id.clone(),
        screen_id: session.current_screen().to_string(),
        image_url: image_url(session.current_screen()),
        task_description: session.task().description.clone(),
    };
    st.sessions
        .lock()
        .expect("session table")
        .insert(created.session_id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Serialize)]
struct ActionChip {
    transition_id: String,
    action: String,
}

#[derive(Debug, Serialize)]
struct SessionView {
    session_id: String,
    task_id: String,
    task_description: String,
    participant_label: String,
    with_confusion: bool,
    screen_id: String,
    image_url: String,
    open: bool,
    outcome: Option<Outcome>,
    available_actions: Vec<ActionChip>,
    steps: Vec<TraceStep>,
}

async fn get_session(State(st): State<Arc<ApiState>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let handle = st.session(&id)?;
    let s = handle.lock().expect("session");
    let t = s.trace();
    Ok(Json(SessionView {
        session_id: t.session_id.clone(),
        task_id: t.task_id.clone(),
        task_description: s.task().description.clone(),
        participant_label: t.run_label.clone(),
        with_confusion: t.with_confusion,
        screen_id: s.current_screen().to_string(),
        image_url: image_url(s.current_screen()),
        open: s.is_open(),
        outcome: t.outcome,
        available_actions: s
            .available()
            .into_iter()
            .map(|tr| ActionChip { transition_id: tr.id(), action: tr.action.clone() })
            .collect(),
        steps: t.steps.clone(),
    }))
}

async fn post_step(
    State(st): State<Arc<ApiState>>,
    Path(id): Path<String>,
    body: Result<Json<HumanStepInput>, JsonRejection>,
) -> ApiResult<serde_json::Value> {
    let handle = st.session(&id)?;
    let Json(input) = body?;
    let mut s = handle.lock().expect("session");
    let report = s.take_turn(TurnInput::from_human(input))?;
    let messages: Vec<&str> = report
        .messages
        .iter()
        .filter(|m| m.kind != MessageKind::CompletionQuery)
        .map(|m| m.text.as_str())
        .collect();
    let trace_path = match report.outcome {
        Some(_) => st.persist(s.trace())?,
        None => None,
    };
    let mut body = if report.advanced {
        json!({
            "advanced": true,
            "screen_id": report.screen,
            "image_url": image_url(&report.screen),
        })
    } else {
        json!({
            "advanced": false,
            "facilitator_message": report.failsafe_text().unwrap_or_default(),
        })
    };
    body["messages"] = json!(messages);
    if let Some(o) = report.outcome {
        body["outcome"] = json!(o);
        body["trace_path"] = json!(trace_path);
    }
    Ok(Json(body))
}

async fn post_complete(State(st): State<Arc<ApiState>>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let handle = st.session(&id)?;
    let mut s = handle.lock().expect("session");
    s.complete()?;
    let trace_path = st.persist(s.trace())?;
    Ok(Json(json!({
        "session_id": id,
        "outcome": s.trace().outcome,
        "trace_path": trace_path,
    })))
}

async fn get_trace(State(st): State<Arc<ApiState>>, Path(id): Path<String>) -> ApiResult<SessionTrace> {
    let handle = st.session(&id)?;
    let s = handle.lock().expect("session");
    Ok(Json(s.trace().clone()))
}

fn mime_for(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

async fn get_screen(State(st): State<Arc<ApiState>>, Path(screen_id): Path<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "unknown_screen", format!("no screen {screen_id:?}"));
    let path = st.graph.image_path(&screen_id).map_err(|_| not_found())?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io_failure", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, mime_for(&path))], bytes).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Routes of the session API.
pub fn router(state: Arc<ApiState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/step", post(post_step))
        .route("/api/sessions/{id}/complete", post(post_complete))
        .route("/api/sessions/{id}/trace", get(get_trace))
        .route("/api/screens/{screen_id}", get(get_screen))
        .fallback(fallback)
        .with_state(state)
}

/// Binds `addr` and serves until Ctrl-C. Assets in `static_dir`, if any, are
/// served for every path outside `/api`.
pub async fn serve(state: Arc<ApiState>, addr: &str, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let mut app = router(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
