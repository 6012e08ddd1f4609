use std::sync::Arc;

use super::session::{Session, SessionMeta, TurnInput};
use super::{AgentKind, Clock, EngineError, Outcome, SessionConfig, SessionTrace};
use crate::backend::{AgentBackend, ChatRequest, ChatTurn, ImageRef};
use crate::graph::AppGraph;
use crate::protocol::{
    parse_evaluator_response, FacilitatorMessage, MessageKind, PromptSet, ResponseMode, TemplateId,
};

/// Identity and environment for one backend-driven session.
pub struct RunContext<'a> {
    pub session_id: String,
    pub run_label: String,
    pub agent_kind: AgentKind,
    pub prompts: &'a PromptSet,
    pub clock: Arc<dyn Clock>,
}

fn screen_image(graph: &AppGraph, screen: &str) -> Vec<ImageRef> {
    vec![ImageRef {
        screen_id: screen.to_string(),
        path: graph.base_dir().join(&graph.screen(screen).expect("known screen").image),
    }]
}

/// Request view of the history, honoring `history_limit`. The prompt and the
/// task introduction are always kept.
fn request_turns(history: &[ChatTurn], limit: Option<usize>) -> Vec<ChatTurn> {
    match limit {
        Some(n) if history.len() > n + 2 => {
            let mut out = history[..2].to_vec();
            out.extend_from_slice(&history[history.len() - n..]);
            out
        }
        _ => history.to_vec(),
    }
}

/// Runs one walkthrough to termination. Backend failures end the session
/// with `aborted_error`; they are not returned as errors.
pub fn run_session(
    graph: Arc<AppGraph>,
    task_id: &str,
    backend: &dyn AgentBackend,
    config: SessionConfig,
    ctx: RunContext<'_>,
) -> Result<SessionTrace, EngineError> {
    let mode = if config.with_confusion {
        ResponseMode::WithConfusion
    } else {
        ResponseMode::Plain
    };
    let limit = config.history_limit;
    let meta = SessionMeta {
        session_id: ctx.session_id,
        agent_kind: ctx.agent_kind,
        backend_label: backend.label().to_string(),
        run_label: ctx.run_label,
    };
    let mut session = Session::new(graph.clone(), task_id, config, meta, ctx.clock)?;
    let task = session.task().clone();
    let template = match mode {
        ResponseMode::Plain => TemplateId::EvaluatorPlain,
        ResponseMode::WithConfusion => TemplateId::EvaluatorWithConfusion,
    };
    let intro = FacilitatorMessage::task_intro(&task.description);
    let mut history = vec![
        ChatTurn::system(ctx.prompts.render(template, &task.description)?),
        ChatTurn::facilitator(intro.text, screen_image(&graph, &task.start)),
    ];
    let session_id = session.trace().session_id.clone();

    while session.is_open() {
        let ask = |history: &[ChatTurn]| {
            let turns = request_turns(history, limit);
            backend.complete(&ChatRequest {
                session_id: &session_id,
                script_key: &task.id,
                turns: &turns,
            })
        };

        let raw = match ask(&history) {
            Ok(r) => r,
            Err(e) => {
                session.abort(Outcome::AbortedError, Some(e.to_string()));
                break;
            }
        };
        history.push(ChatTurn::evaluator(raw.clone()));
        let mut raws = vec![raw];
        let mut messages = Vec::new();
        let mut parsed = parse_evaluator_response(&raws[0], mode);
        if parsed.is_err() {
            let repair = FacilitatorMessage::parse_repair();
            history.push(ChatTurn::facilitator(repair.text.clone(), Vec::new()));
            messages.push(repair);
            match ask(&history) {
                Ok(r) => {
                    history.push(ChatTurn::evaluator(r.clone()));
                    parsed = parse_evaluator_response(&r, mode);
                    raws.push(r);
                }
                Err(e) => {
                    session.abort(Outcome::AbortedError, Some(e.to_string()));
                    break;
                }
            }
        }

        let report = match parsed {
            Ok(response) => {
                let mut input = TurnInput::from_response(response, raws);
                input.messages = messages;
                session.take_turn(input)?
            }
            Err(_) => session.record_unparseable(raws, messages)?,
        };
        if report.outcome.is_some() {
            break;
        }

        let mut text: Vec<&str> = report
            .messages
            .iter()
            .filter(|m| m.kind != MessageKind::CompletionQuery)
            .map(|m| m.text.as_str())
            .collect();
        text.push(if report.advanced {
            "This is the next screen. What would you do next?"
        } else {
            "This is the current screen."
        });
        history.push(ChatTurn::facilitator(text.join("\n"), screen_image(&graph, &report.screen)));
    }
    Ok(session.into_trace())
}
