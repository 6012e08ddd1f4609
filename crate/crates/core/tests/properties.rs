use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::TimeZone;
use proptest::prelude::*;
use serde_json::json;

use cogwalk_core::backend::{
    request_hash, BackendConfig, BackendKind, ChatTurn, ImageRef, RecordingBackend, ReplayBackend, Script,
    ScriptedBackend,
};
use cogwalk_core::engine::{run_session, AgentKind, FixedClock, Outcome, RunContext, SessionConfig, SessionTrace};
use cogwalk_core::graph::{load_app_graph, validate_graph, AppGraph, Manifest, Screen, Task, Transition, TransitionKind};
use cogwalk_core::metrics::{cohens_kappa, js_divergence, Edge, PathDistribution};
use cogwalk_core::protocol::{ConfusionRating, PromptSet};
use cogwalk_core::rater::{rate_without_context, RatingMode, ScreenRating};

/// A connected graph: a chain `s0 -> s1 -> ... -> s{n-1}` plus extra jumps,
/// with one task from `s0` to the last screen along the chain.
fn valid_manifest(n: usize, jumps: &[(usize, usize)]) -> Manifest {
    let id = |i: usize| format!("s{i}");
    let screens = (0..n)
        .map(|i| Screen { id: id(i), image: PathBuf::from(format!("img/s{i}.png")), title: None })
        .collect();
    let mut transitions: Vec<Transition> = (0..n - 1)
        .map(|i| Transition {
            from: id(i),
            action: format!("tap next {i}"),
            synonyms: vec![],
            kind: TransitionKind::Tap,
            to: id(i + 1),
        })
        .collect();
    for &(a, b) in jumps {
        let (a, b) = (a % n, b % n);
        let action = format!("tap jump {b}");
        if a == b || transitions.iter().any(|t| t.from == id(a) && t.action == action) {
            continue;
        }
        transitions.push(Transition { from: id(a), action, synonyms: vec![], kind: TransitionKind::Tap, to: id(b) });
    }
    let task = Task {
        id: "t1".into(),
        description: "Reach the last screen.".into(),
        start: id(0),
        goals: vec![id(n - 1)],
        correct_paths: vec![(0..n).map(id).collect()],
    };
    Manifest { name: "random".into(), screens, transitions, tasks: vec![task] }
}

#[derive(Debug, Clone)]
enum Breakage {
    DropImage(usize),
    DanglingTarget(usize),
    BlankAction(usize),
    DuplicateAction(usize),
    GoalOffGraph,
}

fn breakage() -> impl Strategy<Value = Breakage> {
    prop_oneof![
        (0..64usize).prop_map(Breakage::DropImage),
        (0..64usize).prop_map(Breakage::DanglingTarget),
        (0..64usize).prop_map(Breakage::BlankAction),
        (0..64usize).prop_map(Breakage::DuplicateAction),
        Just(Breakage::GoalOffGraph),
    ]
}

/// Writes the manifest and one image per screen (minus `missing`) into `dir`.
fn write_app(dir: &Path, m: &Manifest, missing: Option<usize>) -> PathBuf {
    fs::create_dir_all(dir.join("img")).unwrap();
    for (i, s) in m.screens.iter().enumerate() {
        if Some(i) != missing {
            fs::write(dir.join(&s.image), b"png").unwrap();
        }
    }
    let path = dir.join("app.json");
    fs::write(&path, serde_json::to_string_pretty(m).unwrap()).unwrap();
    path
}

fn jumps() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..8usize, 0..8usize), 0..10)
}

fn reply(action: &str, rating: &str) -> String {
    json!({
        "current_state": "a screen",
        "possible_actions": [{"action": action, "rationale": "it may lead on", "confidence": "high"}],
        "next_action": action,
        "next_action_rationale": "this looks like the way forward",
        "confusing_or_not": rating,
        "confusing_or_not_rationale": "the labels are what they are"
    })
    .to_string()
}

/// One evaluator turn: a real action somewhere in the graph, an action that
/// matches nothing, or prose that fails to parse.
fn reply_stream(n: usize) -> impl Strategy<Value = Vec<String>> {
    let turn = prop_oneof![
        4 => (0..n, prop::bool::ANY).prop_map(|(i, jump)| {
            reply(&if jump { format!("tap jump {i}") } else { format!("tap next {i}") }, "Not at all confusing")
        }),
        2 => Just(reply("shake the device", "Very confusing")),
        1 => Just("I think I would look around a little more.".to_string()),
    ];
    prop::collection::vec(turn, 0..30)
}

fn clock() -> Arc<FixedClock> {
    Arc::new(FixedClock(chrono::Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()))
}

fn run(graph: &Arc<AppGraph>, backend: &dyn cogwalk_core::backend::AgentBackend, config: SessionConfig) -> SessionTrace {
    let prompts = PromptSet::default();
    let ctx = RunContext {
        session_id: "prop-t1".into(),
        run_label: "prop-run1".into(),
        agent_kind: AgentKind::Scripted,
        prompts: &prompts,
        clock: clock(),
    };
    run_session(graph.clone(), "t1", backend, config, ctx).unwrap()
}

fn config() -> SessionConfig {
    SessionConfig { with_confusion: true, max_steps: 15, ..SessionConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn valid_graphs_load_and_their_correct_paths_are_traversable(n in 2..8usize, jumps in jumps()) {
        let dir = tempfile::tempdir().unwrap();
        let path = write_app(dir.path(), &valid_manifest(n, &jumps), None);
        let g = load_app_graph(&path).unwrap();
        prop_assert!(validate_graph(&g).is_empty());
        for task in g.tasks() {
            for p in &task.correct_paths {
                prop_assert_eq!(&p[0], &task.start);
                prop_assert!(task.is_goal(p.last().unwrap()));
                for w in p.windows(2) {
                    prop_assert!(g.transition_between(&w[0], &w[1]).is_some());
                }
            }
        }
    }

    #[test]
    fn manifest_json_round_trips(n in 2..8usize, jumps in jumps()) {
        let dir = tempfile::tempdir().unwrap();
        let path = write_app(dir.path(), &valid_manifest(n, &jumps), None);
        let g = load_app_graph(&path).unwrap();
        let again = dir.path().join("again.json");
        fs::write(&again, g.to_manifest_json()).unwrap();
        let h = load_app_graph(&again).unwrap();
        prop_assert_eq!(h.manifest(), g.manifest());
        prop_assert_eq!(h.to_manifest_json(), g.to_manifest_json());
    }

    #[test]
    fn load_succeeds_exactly_when_validation_is_clean(
        n in 2..8usize,
        jumps in jumps(),
        breaks in prop::collection::vec(breakage(), 0..3),
    ) {
        let mut m = valid_manifest(n, &jumps);
        let mut missing = None;
        for b in &breaks {
            let k = m.transitions.len();
            match *b {
                Breakage::DropImage(i) => missing = Some(i % n),
                Breakage::DanglingTarget(i) => m.transitions[i % k].to = "ghost".into(),
                Breakage::BlankAction(i) => m.transitions[i % k].action = "  ".into(),
                Breakage::DuplicateAction(i) => {
                    let t = m.transitions[i % k].clone();
                    m.transitions.push(t);
                }
                Breakage::GoalOffGraph => m.tasks[0].goals.push("nowhere".into()),
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = write_app(dir.path(), &m, missing);
        let findings = validate_graph(&cogwalk_core::graph::read_manifest(&path).unwrap());
        prop_assert_eq!(findings.is_empty(), load_app_graph(&path).is_ok());
        prop_assert_eq!(findings.is_empty(), breaks.is_empty());
    }

    #[test]
    fn engine_traces_are_consistent_and_terminate(
        n in 2..7usize,
        jumps in jumps(),
        replies in (2..7usize).prop_flat_map(reply_stream),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let g = Arc::new(load_app_graph(write_app(dir.path(), &valid_manifest(n, &jumps), None)).unwrap());
        let cfg = config();
        let backend = ScriptedBackend::new("prop", Script::new().with("t1", replies));
        let t = run(&g, &backend, cfg.clone());

        prop_assert!(t.outcome.is_some());
        prop_assert!(t.steps.len() <= cfg.max_steps);
        prop_assert_eq!(&t.steps.first().map_or(t.start_screen.clone(), |s| s.screen.clone()), &t.start_screen);
        for w in t.steps.windows(2) {
            let expected = w[0].resolved.as_ref().map_or(&w[0].screen, |r| &r.to);
            prop_assert_eq!(&w[1].screen, expected);
        }
        for (i, s) in t.steps.iter().enumerate() {
            prop_assert_eq!(s.index, i);
            prop_assert!(s.failsafe != s.resolved.is_some() || s.response.is_none());
        }
        prop_assert!(t.failsafe_count() <= cfg.stuck_limit);
        prop_assert_eq!(t.outcome == Some(Outcome::AbortedStuck), t.failsafe_count() == cfg.stuck_limit);
        if t.outcome == Some(Outcome::Completed) {
            prop_assert!(g.task("t1").unwrap().is_goal(t.final_screen()));
        }
    }

    #[test]
    fn loop_graphs_never_run_past_the_limits(replies in reply_stream(2)) {
        // Two screens pointing at each other with no goal reachable.
        let mut m = valid_manifest(3, &[(1, 0)]);
        m.transitions.retain(|t| t.from != "s1" || t.to == "s0");
        m.tasks[0].correct_paths.clear();
        let dir = tempfile::tempdir().unwrap();
        let g = Arc::new(AppGraph::from_manifest(m.clone(), dir.path()));
        write_app(dir.path(), &m, None);
        let cfg = config();
        let mut looping = replies.clone();
        looping.extend(std::iter::repeat_n(reply("tap next 0", "Slightly confusing"), 3));
        looping.extend(std::iter::repeat_n(reply("tap jump 0", "Slightly confusing"), 3));
        looping.extend(replies);
        let t = run(&g, &ScriptedBackend::new("prop", Script::new().with("t1", looping)), cfg.clone());
        prop_assert!(t.steps.len() <= cfg.max_steps);
        prop_assert!(t.outcome.is_some());
        prop_assert_ne!(t.outcome, Some(Outcome::Completed));
        prop_assert!(t.failsafe_count() <= cfg.stuck_limit);
    }

    #[test]
    fn replaying_a_recording_reproduces_the_trace(
        n in 2..6usize,
        jumps in jumps(),
        replies in (2..6usize).prop_flat_map(reply_stream),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let g = Arc::new(load_app_graph(write_app(dir.path(), &valid_manifest(n, &jumps), None)).unwrap());
        let rec_path = dir.path().join("rec.jsonl");
        let scripted = ScriptedBackend::new("prop", Script::new().with("t1", replies));
        let live = run(&g, &RecordingBackend::create(scripted, &rec_path, false).unwrap(), config());
        // Runs that end on an exhausted script have no recorded final reply.
        prop_assume!(live.outcome != Some(Outcome::AbortedError));
        let replayed = run(&g, &ReplayBackend::load("prop", &rec_path).unwrap(), config());
        prop_assert_eq!(replayed, live);
    }

    #[test]
    fn request_hash_depends_on_screen_ids_not_paths(
        text in ".{0,40}",
        screen in "[a-z]{1,8}",
        p1 in "[a-z/]{1,20}",
        p2 in "[a-z/]{1,20}",
    ) {
        let turns = |p: &str, t: &str| vec![
            ChatTurn::system("system"),
            ChatTurn::facilitator(t, vec![ImageRef { screen_id: screen.clone(), path: PathBuf::from(p) }]),
        ];
        let h = request_hash(&turns(&p1, &text));
        prop_assert_eq!(h.len(), 64);
        prop_assert!(h.bytes().all(|b| b.is_ascii_hexdigit()));
        prop_assert_eq!(&h, &request_hash(&turns(&p2, &text)));
        prop_assert_ne!(&h, &request_hash(&turns(&p1, &format!("{text}!"))));
    }

    #[test]
    fn screen_rating_binary_is_the_collapsed_rating(
        r in prop_oneof![Just(ConfusionRating::NotAtAll), Just(ConfusionRating::Slightly), Just(ConfusionRating::Very)],
        rationale in ".{0,30}",
    ) {
        let s = ScreenRating::new("run1", RatingMode::WithoutContext, "app", "t1", "s0", r, rationale);
        prop_assert_eq!(s.binary, r.collapse());
        prop_assert!(s.is_consistent());
        let back: ScreenRating = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn kappa_of_a_rater_with_itself_is_one(a in prop::collection::vec(prop::bool::ANY, 2..40)) {
        let k = cohens_kappa(&a, &a).unwrap();
        if a.iter().any(|x| *x) && a.iter().any(|x| !*x) {
            prop_assert_eq!(k, Some(1.0));
        } else {
            prop_assert_eq!(k, None);
        }
    }

    #[test]
    fn js_divergence_matches_entropy_oracle_on_rational_masses(
        p in prop::collection::vec(0u32..6, 4),
        q in prop::collection::vec(0u32..6, 4),
    ) {
        prop_assume!(p.iter().sum::<u32>() > 0 && q.iter().sum::<u32>() > 0);
        let edges: Vec<Edge> = (0..4).map(|i| (format!("a{i}"), format!("b{i}"))).collect();
        let dist = |w: &[u32]| {
            let total: u32 = w.iter().sum();
            let mass: BTreeMap<Edge, f64> = edges
                .iter()
                .zip(w)
                .filter(|(_, k)| **k > 0)
                .map(|(e, k)| (e.clone(), f64::from(*k) / f64::from(total)))
                .collect();
            PathDistribution { mass }
        };
        let norm = |w: &[u32]| -> Vec<f64> {
            let total: u32 = w.iter().sum();
            w.iter().map(|k| f64::from(*k) / f64::from(total)).collect()
        };
        let h = |xs: &[f64]| -> f64 { xs.iter().filter(|x| **x > 0.0).map(|x| -x * x.log2()).sum() };
        let (pn, qn) = (norm(&p), norm(&q));
        let m: Vec<f64> = pn.iter().zip(&qn).map(|(a, b)| (a + b) / 2.0).collect();
        let oracle = h(&m) - (h(&pn) + h(&qn)) / 2.0;
        let got = js_divergence(&dist(&p), &dist(&q));
        prop_assert!((got - oracle).abs() < 1e-12, "{} vs {}", got, oracle);
    }

    #[test]
    fn rating_without_context_is_deterministic(
        n in 2..6usize,
        pick in 0..6usize,
        rating in prop_oneof![Just("Not at all confusing"), Just("Slightly confusing"), Just("Very confusing")],
    ) {
        let dir = tempfile::tempdir().unwrap();
        let g = load_app_graph(write_app(dir.path(), &valid_manifest(n, &[]), None)).unwrap();
        let screen = format!("s{}", pick % n);
        let raw = json!({"confusing_or_not": rating, "confusing_or_not_rationale": "the icons are unlabeled"}).to_string();
        let backend = ScriptedBackend::new("rater", Script::new().with(format!("t1/{screen}"), [raw]));
        let prompts = PromptSet::default();
        let a = rate_without_context(&g, &screen, "t1", &backend, "rater-run1", &prompts).unwrap();
        let b = rate_without_context(&g, &screen, "t1", &backend, "rater-run1", &prompts).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn api_keys_stay_out_of_configs_traces_and_recordings() {
    let secret = "sk-test-6f1e0c2d9b";
    let var = "COGWALK_PROPERTY_TEST_KEY";
    std::env::set_var(var, secret);
    let mut cfg = BackendConfig::new(BackendKind::Scripted, "prop");
    cfg.api_key_env = Some(var.into());
    assert!(!serde_json::to_string(&cfg).unwrap().contains(secret));
    assert!(!toml::to_string(&cfg).unwrap().contains(secret));

    let dir = tempfile::tempdir().unwrap();
    let g = Arc::new(load_app_graph(write_app(dir.path(), &valid_manifest(3, &[]), None)).unwrap());
    let rec = dir.path().join("rec.jsonl");
    let replies = [reply("tap next 0", "Slightly confusing"), reply("tap next 1", "Not at all confusing")];
    let backend = RecordingBackend::create(ScriptedBackend::new("prop", Script::new().with("t1", replies)), &rec, false).unwrap();
    let t = run(&g, &backend, config());
    assert_eq!(t.outcome, Some(Outcome::Completed));
    assert!(!serde_json::to_string(&t).unwrap().contains(secret));
    assert!(!fs::read_to_string(&rec).unwrap().contains(secret));
}
