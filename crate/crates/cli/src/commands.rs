use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::Deserialize;

use cogwalk_core::backend::{
    open_backend, AgentBackend, BackendConfig, BackendKind, RecordingBackend, ReplayBackend,
};
use cogwalk_core::engine::{run_session, AgentKind, Clock, FixedClock, RunContext, SessionConfig, SystemClock};
use cogwalk_core::graph::{is_valid_id, load_app_graph, read_manifest, validate_graph, AppGraph};
use cogwalk_core::metrics::{build_report, GroupBy, InputFile, ReportInputs};
use cogwalk_core::protocol::PromptSet;
use cogwalk_core::rater::rate_screens;
use cogwalk_core::store::{
    self, load_ratings_dir, load_traces, persist_trace, read_human_labels, sha256_file, trace_to_jsonl,
    write_ratings, FileRef, RunManifest,
};

use crate::args::{GroupByArg, MetricsArgs, RateArgs, ReplayArgs, SessionFlags, WalkArgs};

/// Outcome of a command that did not fail at runtime.
#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Findings,
}

pub fn validate(manifest: &Path, out: &mut impl Write) -> Result<Status> {
    let graph = match read_manifest(manifest) {
        Ok(g) => g,
        Err(e @ cogwalk_core::graph::GraphError::ManifestSyntax { .. }) => {
            writeln!(out, "{e}")?;
            return Ok(Status::Findings);
        }
        Err(e) => return Err(e.into()),
    };
    let findings = validate_graph(&graph);
    for f in &findings {
        writeln!(out, "{f}")?;
    }
    Ok(if findings.is_empty() { Status::Ok } else { Status::Findings })
}

fn prompts(dir: Option<&Path>) -> Result<PromptSet> {
    Ok(match dir {
        Some(d) => PromptSet::load_dir(d)?,
        None => PromptSet::default(),
    })
}

fn clock(fixed: Option<DateTime<Utc>>) -> Arc<dyn Clock> {
    match fixed {
        Some(t) => Arc::new(FixedClock(t)),
        None => Arc::new(SystemClock),
    }
}

fn task_ids(graph: &AppGraph, requested: &[String]) -> Result<Vec<String>> {
    if requested.is_empty() {
        return Ok(graph.tasks().iter().map(|t| t.id.clone()).collect());
    }
    for t in requested {
        graph.task(t)?;
    }
    Ok(requested.to_vec())
}

struct Sessions<'a> {
    flags: &'a SessionFlags,
    graph: Arc<AppGraph>,
    tasks: Vec<String>,
    run_id: String,
    agent_kind: AgentKind,
}

impl Sessions<'_> {
    fn prepare(flags: &SessionFlags, agent_kind: AgentKind) -> Result<Sessions<'_>> {
        let graph = Arc::new(load_app_graph(&flags.manifest)?);
        let tasks = task_ids(&graph, &flags.tasks)?;
        let now = flags.fixed_time.unwrap_or_else(Utc::now);
        let run_id = flags.run_id.clone().unwrap_or_else(|| now.format("%Y%m%dT%H%M%SZ").to_string());
        if !is_valid_id(&run_id) {
            bail!("run id {run_id:?} may only contain letters, digits and _#.-");
        }
        Ok(Sessions { flags, graph, tasks, run_id, agent_kind })
    }

    /// Runs every repetition of every task, handing each finished trace to
    /// `sink`.
    fn run(&self, backend: &dyn AgentBackend, mut sink: impl FnMut(&cogwalk_core::engine::SessionTrace) -> Result<()>) -> Result<()> {
        let prompts = prompts(self.flags.prompts.as_deref())?;
        let config = SessionConfig {
            max_steps: self.flags.max_steps,
            stuck_limit: self.flags.stuck_limit,
            with_confusion: self.flags.with_confusion,
            history_limit: self.flags.history_limit,
            ..SessionConfig::default()
        };
        config.validate()?;
        let clock = clock(self.flags.fixed_time);
        for k in 1..=self.flags.runs {
            for task in &self.tasks {
                let ctx = RunContext {
                    session_id: format!("{}-r{k}-{task}", self.run_id),
                    run_label: format!("{}-run{k}", backend.label()),
                    agent_kind: self.agent_kind,
                    prompts: &prompts,
                    clock: clock.clone(),
                };
                let trace = run_session(self.graph.clone(), task, backend, config.clone(), ctx)?;
                sink(&trace)?;
            }
        }
        Ok(())
    }

    fn manifest(&self, out: &Path, backend_config: Option<FileRef>, label: &str, recording: Option<FileRef>, outputs: Vec<String>) -> Result<RunManifest> {
        Ok(RunManifest {
            run_id: self.run_id.clone(),
            app_manifest: FileRef::of(&self.flags.manifest)?,
            task_ids: self.tasks.clone(),
            backend_config,
            backend_label: label.to_string(),
            with_confusion: self.flags.with_confusion,
            without_context: false,
            repetitions: self.flags.runs as usize,
            output_dir: out.to_path_buf(),
            recording,
            created_at: self.flags.fixed_time.unwrap_or_else(Utc::now),
            outputs,
        })
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ensure_new_run(out: &Path, run_id: &str, force: bool) -> Result<()> {
    let path = out.join(RunManifest::file_name(run_id));
    if path.exists() && !force {
        bail!("run {run_id:?} already exists in {} (use --force to overwrite)", out.display());
    }
    Ok(())
}

pub fn walk(args: &WalkArgs, out: &mut impl Write) -> Result<Status> {
    let config = BackendConfig::load(&args.backend)?;
    let agent_kind = if config.kind == BackendKind::Scripted { AgentKind::Scripted } else { AgentKind::Llm };
    let s = Sessions::prepare(&args.session, agent_kind)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    ensure_new_run(&args.out, &s.run_id, args.session.force)?;

    let inner = open_backend(&config)?;
    let backend: Box<dyn AgentBackend> = match &args.record {
        Some(path) => Box::new(RecordingBackend::create(inner, path, args.session.force)?),
        None => inner,
    };
    let mut outputs = Vec::new();
    s.run(backend.as_ref(), |trace| {
        let path = persist_trace(trace, &args.out)?;
        writeln!(out, "{}\t{:?}\t{}", trace.session_id, trace.outcome.expect("closed"), path.display())?;
        outputs.push(file_name(&path));
        Ok(())
    })?;
    drop(backend);

    let recording = match (&args.record, config.kind) {
        (Some(p), _) => Some(FileRef::of(p)?),
        (None, BackendKind::Replay) => Some(FileRef::of(config.recording_path.as_ref().expect("validated"))?),
        _ => None,
    };
    let manifest = s.manifest(&args.out, Some(FileRef::of(&args.backend)?), &config.model_label, recording, outputs)?;
    manifest.write(true)?;
    Ok(Status::Ok)
}

pub fn replay(args: &ReplayArgs, out: &mut impl Write) -> Result<Status> {
    let s = Sessions::prepare(&args.session, AgentKind::Llm)?;
    let backend = ReplayBackend::load(args.label.clone(), &args.recording)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            ensure_new_run(dir, &s.run_id, args.session.force)?;
            let mut outputs = Vec::new();
            s.run(&backend, |trace| {
                let path = persist_trace(trace, dir)?;
                writeln!(out, "{}\t{:?}\t{}", trace.session_id, trace.outcome.expect("closed"), path.display())?;
                outputs.push(file_name(&path));
                Ok(())
            })?;
            let m = s.manifest(dir, None, &args.label, Some(FileRef::of(&args.recording)?), outputs)?;
            m.write(true)?;
        }
        None => s.run(&backend, |trace| {
            out.write_all(trace_to_jsonl(trace).as_bytes())?;
            Ok(())
        })?,
    }
    Ok(Status::Ok)
}

#[derive(Deserialize)]
struct ScreenItem {
    task: String,
    screen: String,
}

pub fn rate(args: &RateArgs, out: &mut impl Write) -> Result<Status> {
    let graph = load_app_graph(&args.manifest)?;
    let config = BackendConfig::load(&args.backend)?;
    let text = fs::read_to_string(&args.screens_file)
        .with_context(|| format!("reading {}", args.screens_file.display()))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let item: ScreenItem = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", args.screens_file.display(), i + 1))?;
        graph.task(&item.task)?;
        if !graph.has_screen(&item.screen) {
            bail!("{}:{}: unknown screen {:?}", args.screens_file.display(), i + 1, item.screen);
        }
        items.push((item.task, item.screen));
    }
    let run_label = args.run_label.clone().unwrap_or_else(|| format!("{}-run1", config.model_label));
    let out_dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let run_id = format!("rate-{run_label}");
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    ensure_new_run(out_dir, &run_id, args.force)?;

    let backend = open_backend(&config)?;
    let prompts = prompts(args.prompts.as_deref())?;
    let results = rate_screens(&graph, &items, backend.as_ref(), &run_label, &prompts, config.max_concurrent);
    let mut ratings = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(r) => ratings.push(r),
            Err(e) => failures.push(e.to_string()),
        }
    }
    write_ratings(&args.out, &ratings)?;
    writeln!(out, "{} ratings written to {}", ratings.len(), args.out.display())?;

    let manifest = RunManifest {
        run_id,
        app_manifest: FileRef::of(&args.manifest)?,
        task_ids: {
            let mut t: Vec<String> = items.iter().map(|(t, _)| t.clone()).collect();
            t.dedup();
            t
        },
        backend_config: Some(FileRef::of(&args.backend)?),
        backend_label: config.model_label.clone(),
        with_confusion: false,
        without_context: true,
        repetitions: 1,
        output_dir: out_dir.to_path_buf(),
        recording: None,
        created_at: Utc::now(),
        outputs: vec![file_name(&args.out)],
    };
    manifest.write(true)?;
    if !failures.is_empty() {
        bail!("{} of {} ratings failed:\n{}", failures.len(), items.len(), failures.join("\n"));
    }
    Ok(Status::Ok)
}

fn input(prefix: &str, path: &Path) -> Result<InputFile> {
    Ok(InputFile { name: format!("{prefix}/{}", file_name(path)), sha256: sha256_file(path)? })
}

pub fn metrics(args: &MetricsArgs, err: &mut impl Write) -> Result<Status> {
    let mut inputs = Vec::new();
    let mut graphs = Vec::new();
    for m in &args.manifests {
        graphs.push(load_app_graph(m)?);
        inputs.push(input("manifests", m)?);
    }
    let labels = match &args.human_labels {
        Some(p) => {
            if !p.is_file() {
                bail!("human labels file not found: {}", p.display());
            }
            inputs.push(input("labels", p)?);
            read_human_labels(p)?
        }
        None => Vec::new(),
    };
    if !args.traces.is_dir() {
        bail!("trace directory not found: {}", args.traces.display());
    }
    let loaded = load_traces(&args.traces)?;
    for v in &loaded.violations {
        writeln!(err, "skipped {v}")?;
    }
    let mut traces = Vec::new();
    for (path, t) in loaded.traces {
        inputs.push(input("traces", &path)?);
        traces.push(t);
    }
    let mut ratings = Vec::new();
    if let Some(dir) = &args.ratings {
        for (path, rs) in load_ratings_dir(dir)? {
            inputs.push(input("ratings", &path)?);
            ratings.extend(rs);
        }
    }
    let graph_refs: Vec<&AppGraph> = graphs.iter().collect();
    let report = build_report(&ReportInputs {
        graphs: &graph_refs,
        traces: &traces,
        ratings: &ratings,
        human_labels: &labels,
        group_by: match args.group_by {
            GroupByArg::AgentKind => GroupBy::AgentKind,
            GroupByArg::BackendLabel => GroupBy::BackendLabel,
            GroupByArg::Run => GroupBy::Run,
        },
        alpha: args.alpha,
        inputs,
    })?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    store::write_atomic(&args.out.join("report.csv"), report.to_csv().as_bytes())?;
    store::write_atomic(&args.out.join("summary.md"), report.to_summary_markdown().as_bytes())?;
    Ok(Status::Ok)
}
