use std::sync::Arc;

use super::loops::{detect_loop_probes, repeats_in_place, LoopProbe};
use super::matcher::{normalize_action, resolve_action};
use super::{
    AgentKind, Clock, EngineError, HumanStepInput, Outcome, SessionConfig, SessionTrace, TraceStep,
    PROBE_MIN_RATIONALE_CHARS,
};
use crate::graph::{AppGraph, Task, Transition};
use crate::protocol::{EvaluatorResponse, FacilitatorMessage, MessageKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionChoice {
    /// Free text, resolved through the matcher.
    Text(String),
    /// A transition picked directly (human UI chips).
    TransitionId(String),
}

/// One evaluator turn as handed to the facilitator.
#[derive(Debug, Clone, Default)]
pub struct TurnInput {
    pub action: Option<ActionChoice>,
    pub response: Option<EvaluatorResponse>,
    pub human_input: Option<HumanStepInput>,
    pub raw_responses: Vec<String>,
    /// Messages already exchanged during this turn (parse repair).
    pub messages: Vec<FacilitatorMessage>,
}

impl TurnInput {
    pub fn from_response(response: EvaluatorResponse, raw_responses: Vec<String>) -> Self {
        Self {
            action: Some(ActionChoice::Text(response.next_action.clone())),
            response: Some(response),
            raw_responses,
            ..Self::default()
        }
    }

    pub fn from_human(input: HumanStepInput) -> Self {
        let action = match (&input.transition_id, &input.action_text) {
            (Some(id), _) => Some(ActionChoice::TransitionId(id.clone())),
            (None, Some(text)) => Some(ActionChoice::Text(text.clone())),
            (None, None) => None,
        };
        Self { action, human_input: Some(input), ..Self::default() }
    }

    fn declares_complete(&self) -> bool {
        self.response.as_ref().is_some_and(|r| r.declares_complete)
    }

    fn rationale(&self) -> Option<&str> {
        if let Some(r) = &self.response {
            return Some(&r.next_action_rationale);
        }
        self.human_input.as_ref().map(|h| h.think_aloud.as_str())
    }
}

/// What the facilitator tells the evaluator after a turn.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub advanced: bool,
    pub screen: String,
    /// Messages generated by this turn, in sending order.
    pub messages: Vec<FacilitatorMessage>,
    pub outcome: Option<Outcome>,
}

impl StepReport {
    pub fn failsafe_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.kind == MessageKind::Failsafe)
            .map(|m| m.text.as_str())
    }
}

/// Identity fields copied into the trace header.
#[derive(Debug, Clone)]
pub struct SessionMeta {
    pub session_id: String,
    pub agent_kind: AgentKind,
    pub backend_label: String,
    pub run_label: String,
}

/// Facilitator state for one walkthrough of one task.
pub struct Session {
    graph: Arc<AppGraph>,
    task: Task,
    config: SessionConfig,
    clock: Arc<dyn Clock>,
    trace: SessionTrace,
    current: String,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("session_id", &self.trace.session_id)
            .field("current", &self.current)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(
        graph: Arc<AppGraph>,
        task_id: &str,
        config: SessionConfig,
        meta: SessionMeta,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let task = graph
            .task(task_id)
            .map_err(|_| EngineError::GraphTaskMismatch {
                app: graph.name().to_string(),
                task: task_id.to_string(),
            })?
            .clone();
        let trace = SessionTrace {
            session_id: meta.session_id,
            agent_kind: meta.agent_kind,
            backend_label: meta.backend_label,
            run_label: meta.run_label,
            task_id: task.id.clone(),
            app_name: graph.name().to_string(),
            with_confusion: config.with_confusion,
            start_screen: task.start.clone(),
            steps: Vec::new(),
            outcome: None,
            error: None,
            started_at: clock.now(),
            ended_at: None,
        };
        Ok(Self { current: task.start.clone(), graph, task, config, clock, trace })
    }

    pub fn graph(&self) -> &AppGraph {
        &self.graph
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn current_screen(&self) -> &str {
        &self.current
    }

    pub fn is_open(&self) -> bool {
        self.trace.outcome.is_none()
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SessionTrace {
        self.trace
    }

    pub fn available(&self) -> Vec<&Transition> {
        self.graph
            .available_transitions(&self.current)
            .expect("current screen belongs to the graph")
    }

    fn finish(&mut self, outcome: Outcome, error: Option<String>) {
        self.trace.outcome = Some(outcome);
        self.trace.error = error;
        self.trace.ended_at = Some(self.clock.now());
    }

    /// Ends the session early, e.g. on a backend failure.
    pub fn abort(&mut self, outcome: Outcome, error: Option<String>) {
        if self.is_open() {
            self.finish(outcome, error);
        }
    }

    /// Explicit completion (the human "I'm done" control).
    pub fn complete(&mut self) -> Result<(), EngineError> {
        if !self.is_open() {
            return Err(EngineError::SessionClosed);
        }
        if !self.task.is_goal(&self.current) {
            return Err(EngineError::NotOnGoal(self.current.clone()));
        }
        self.finish(Outcome::Completed, None);
        Ok(())
    }

    /// Records a turn whose reply could not be parsed even after the repair
    /// message; it counts as a stuck event.
    pub fn record_unparseable(
        &mut self,
        raw_responses: Vec<String>,
        messages: Vec<FacilitatorMessage>,
    ) -> Result<StepReport, EngineError> {
        let input = TurnInput { raw_responses, messages, ..TurnInput::default() };
        self.take_turn(input)
    }

    fn loop_window(&self, action: &str, prospective: Option<&str>) -> Vec<LoopProbe> {
        let keep = self.config.loop_window.saturating_sub(if prospective.is_some() { 2 } else { 1 });
        let steps = &self.trace.steps;
        let mut window: Vec<LoopProbe> = steps[steps.len().saturating_sub(keep)..]
            .iter()
            .map(LoopProbe::from)
            .collect();
        window.push(LoopProbe {
            screen: self.current.clone(),
            action: action.to_string(),
            moved: prospective.is_some(),
        });
        if let Some(to) = prospective {
            window.push(LoopProbe { screen: to.to_string(), action: String::new(), moved: false });
        }
        window
    }

    /// Applies one evaluator turn: resolve the action, check for loops, move
    /// or issue the fail-safe, and decide termination.
    pub fn take_turn(&mut self, input: TurnInput) -> Result<StepReport, EngineError> {
        if !self.is_open() {
            return Err(EngineError::SessionClosed);
        }
        if let Some(h) = &input.human_input {
            h.check(self.config.with_confusion)?;
        }
        let index = self.trace.steps.len();
        let screen = self.current.clone();
        let mut new_messages = Vec::new();
        let mut resolved = None;
        let mut loop_detected = false;

        let completes_here = input.declares_complete() && self.task.is_goal(&self.current);
        if !completes_here {
            let action_norm = match &input.action {
                Some(ActionChoice::Text(t)) => normalize_action(t),
                Some(ActionChoice::TransitionId(id)) => normalize_action(id),
                None => String::new(),
            };
            let repeated = !action_norm.is_empty()
                && repeats_in_place(&self.loop_window(&action_norm, None));
            let target = if repeated {
                loop_detected = true;
                None
            } else {
                let available = self.available();
                match &input.action {
                    Some(ActionChoice::Text(t)) => {
                        resolve_action(t, &available, self.config.match_threshold).cloned()
                    }
                    Some(ActionChoice::TransitionId(id)) => {
                        available.iter().find(|t| t.id() == *id).map(|t| (*t).clone())
                    }
                    None => None,
                }
            };
            if let Some(t) = target {
                if detect_loop_probes(&self.loop_window(&action_norm, Some(&t.to))) {
                    loop_detected = true;
                } else {
                    resolved = Some(t);
                }
            }
        }

        let failsafe = !completes_here && resolved.is_none();
        if failsafe {
            new_messages.push(FacilitatorMessage::failsafe());
        }
        if self.config.probe
            && !completes_here
            && input
                .rationale()
                .is_some_and(|r| r.trim().chars().count() < PROBE_MIN_RATIONALE_CHARS)
        {
            new_messages.push(FacilitatorMessage::probe());
        }
        if let Some(t) = &resolved {
            self.current = t.to.clone();
        }
        let reached_goal = resolved.is_some() && self.task.is_goal(&self.current);
        if reached_goal && self.config.auto_complete_on_goal {
            new_messages.push(FacilitatorMessage::completion_query());
        }

        let mut messages = input.messages;
        messages.extend(new_messages.iter().cloned());
        let advanced = resolved.is_some();
        self.trace.steps.push(TraceStep {
            index,
            screen,
            response: input.response,
            human_input: input.human_input,
            raw_responses: input.raw_responses,
            resolved,
            failsafe,
            loop_detected,
            facilitator_messages: messages,
        });

        if completes_here || (reached_goal && self.config.auto_complete_on_goal) {
            self.finish(Outcome::Completed, None);
        } else if failsafe && self.trace.failsafe_count() >= self.config.stuck_limit {
            self.finish(Outcome::AbortedStuck, None);
        } else if self.trace.steps.len() >= self.config.max_steps {
            self.finish(Outcome::AbortedMaxSteps, None);
        }

        Ok(StepReport {
            advanced,
            screen: self.current.clone(),
            messages: new_messages,
            outcome: self.trace.outcome,
        })
    }
}
