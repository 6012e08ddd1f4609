use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cogwalk", version, about = "Run and score automated cognitive walkthroughs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an app manifest; exit 1 when there are findings.
    Validate {
        manifest: PathBuf,
    },
    /// Run walkthrough sessions against a backend.
    Walk(WalkArgs),
    /// Rate isolated screens without walkthrough history.
    RateScreens(RateArgs),
    /// Build the metrics report.
    Metrics(MetricsArgs),
    /// Serve the human-session HTTP API.
    Serve(ServeArgs),
    /// Re-run sessions from a recording.
    Replay(ReplayArgs),
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("expected an RFC 3339 timestamp: {e}"))
}

/// Flags shared by `walk` and `replay`.
#[derive(Debug, Clone, Args)]
pub struct SessionFlags {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Task id; repeat for several. Defaults to every task.
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub runs: u32,
    #[arg(long)]
    pub with_confusion: bool,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Stamp every trace with this instant instead of the wall clock.
    #[arg(long, value_parser = parse_time)]
    pub fixed_time: Option<DateTime<Utc>>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 5)]
    pub stuck_limit: usize,
    /// Forward only this many recent turns to the backend.
    #[arg(long)]
    pub history_limit: Option<usize>,
    /// Overwrite an existing run manifest or recording.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    #[command(flatten)]
    pub session: SessionFlags,
    /// Backend config (TOML).
    #[arg(long)]
    pub backend: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Record backend replies to this file for later replay.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub session: SessionFlags,
    #[arg(long)]
    pub recording: PathBuf,
    /// Backend label written into the traces.
    #[arg(long, default_value = "replay")]
    pub label: String,
    /// Trace directory; without it traces are printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON lines of `{"task": ..., "screen": ...}`.
    #[arg(long)]
    pub screens_file: PathBuf,
    #[arg(long)]
    pub backend: PathBuf,
    /// Defaults to `<model_label>-run1`.
    #[arg(long)]
    pub run_label: Option<String>,
    /// Ratings file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupByArg {
    AgentKind,
    BackendLabel,
    Run,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Directory of without-context ratings files.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long)]
    pub human_labels: Option<PathBuf>,
    /// App manifest providing correct paths; repeat for several apps.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "run")]
    pub group_by: GroupByArg,
    /// Additive smoothing for path distributions.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8787)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Where closed human sessions are written.
    #[arg(long)]
    pub traces_out: Option<PathBuf>,
    /// Directory of front-end assets served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Probe terse think-aloud the way LLM evaluators are probed.
    #[arg(long)]
    pub probe_humans: bool,
}
