use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cogwalk_core::engine::{AgentKind, Outcome};
use cogwalk_core::store::{load_traces, RunManifest};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Fixture path as a `'static` string so it can sit in argument arrays.
fn fixture(rel: &str) -> &'static str {
    let p = root().join("fixtures").join(rel);
    Box::leak(p.to_str().unwrap().to_owned().into_boxed_str())
}

fn cogwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogwalk")).args(args).output().expect("spawn cogwalk")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_clean_manifest_is_silent() {
    for m in ["minimal/app.json", "demo-app/app.json"] {
        let out = cogwalk(&["validate", fixture(m)]);
        assert_eq!(out.status.code(), Some(0), "{m}");
        assert!(out.stdout.is_empty(), "{m}: {}", String::from_utf8_lossy(&out.stdout));
    }
}

#[test]
fn validate_reports_findings_with_exit_1() {
    let out = cogwalk(&["validate", fixture("broken/app.json")]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("DanglingReference"), "{text}");
    assert!(text.contains("MissingImage"), "{text}");
    assert!(text.contains("EmptyActionLabel"), "{text}");
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(cogwalk(&[]).status.code(), Some(64));
    assert_eq!(cogwalk(&["walk", "--bogus"]).status.code(), Some(64));
    assert_eq!(cogwalk(&["--help"]).status.code(), Some(0));
    let out = cogwalk(&["validate", "/no/such/manifest.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/manifest.json"));
}

#[test]
fn walk_five_runs_writes_five_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("traces");
    let out = cogwalk(&[
        "walk",
        "--manifest",
        fixture("demo-app/app.json"),
        "--task",
        "t1",
        "--backend",
        fixture("demo-app/backends/scripted.toml"),
        "--runs",
        "5",
        "--with-confusion",
        "--run-id",
        "five",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = load_traces(&out_dir).unwrap();
    assert!(loaded.violations.is_empty());
    assert_eq!(loaded.traces.len(), 5);
    let labels: Vec<_> = loaded.traces.iter().map(|(_, t)| t.run_label.clone()).collect();
    assert_eq!(labels, (1..=5).map(|k| format!("scripted-eval-run{k}")).collect::<Vec<_>>());
    for (_, t) in &loaded.traces {
        assert_eq!(t.agent_kind, AgentKind::Scripted);
        assert_eq!(t.outcome, Some(Outcome::Completed));
    }

    let manifest = RunManifest::read(&out_dir.join("run-five.json")).unwrap();
    assert_eq!(manifest.repetitions, 5);
    assert_eq!(manifest.task_ids, ["t1"]);
    assert_eq!(manifest.outputs.len(), 5);
    assert!(manifest.backend_config.is_some());

    // A second run with the same id is refused unless forced.
    let again = |force: bool| {
        let mut args = vec![
            "walk",
            "--manifest",
            fixture("demo-app/app.json"),
            "--task",
            "t1",
            "--backend",
            fixture("demo-app/backends/scripted.toml"),
            "--run-id",
            "five",
            "--out",
            s(&out_dir),
        ];
        if force {
            args.push("--force");
        }
        cogwalk(&args).status.code()
    };
    assert_eq!(again(false), Some(2));
    assert_eq!(again(true), Some(0));
}

#[test]
fn metrics_with_missing_labels_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("labels-missing.jsonl");
    let out = cogwalk(&[
        "metrics",
        "--traces",
        s(dir.path()),
        "--human-labels",
        s(&missing),
        "--manifest",
        fixture("demo-app/app.json"),
        "--out",
        s(&dir.path().join("report")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn replay_without_out_prints_the_walk_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("walk");
    let common = [
        "--manifest",
        fixture("demo-app/app.json"),
        "--runs",
        "3",
        "--with-confusion",
        "--fixed-time",
        "2025-01-01T00:00:00Z",
    ];
    let mut walk = vec!["walk", "--backend", fixture("demo-app/backends/replay.toml"), "--out", s(&out_dir)];
    walk.extend(common);
    assert_eq!(cogwalk(&walk).status.code(), Some(0));

    let mut replay = vec![
        "replay",
        "--recording",
        fixture("demo-app/recording.jsonl"),
        "--label",
        "scripted-eval",
    ];
    replay.extend(common);
    let out = cogwalk(&replay);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut names: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    names.sort();
    let expected: Vec<u8> = names.iter().flat_map(|p| fs::read(p).unwrap()).collect();
    // Files sort by name, sessions run in run-then-task order; both agree here.
    assert_eq!(String::from_utf8(out.stdout).unwrap(), String::from_utf8(expected).unwrap());
}

#[test]
fn replay_miss_aborts_each_session_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cogwalk(&[
        "replay",
        "--manifest",
        fixture("demo-app/app.json"),
        "--recording",
        fixture("demo-app/recording.jsonl"),
        "--out",
        s(dir.path()),
    ]);
    // Plain mode sends a different system prompt, so nothing was recorded for it.
    assert_eq!(out.status.code(), Some(0));
    let loaded = load_traces(dir.path()).unwrap();
    assert!(loaded
        .traces
        .iter()
        .all(|(_, t)| t.outcome == Some(Outcome::AbortedError) && t.error.as_deref().unwrap().contains("no recorded response")));
}

#[test]
fn rate_screens_writes_ratings_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ratings").join("r.jsonl");
    let out = cogwalk(&[
        "rate-screens",
        "--manifest",
        fixture("demo-app/app.json"),
        "--screens-file",
        fixture("demo-app/screens.jsonl"),
        "--backend",
        fixture("demo-app/backends/scripted.toml"),
        "--out",
        s(&file),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&file).unwrap().lines().count(), 8);
    let m = RunManifest::read(&dir.path().join("ratings/run-rate-scripted-eval-run1.json")).unwrap();
    assert!(m.without_context);
}
