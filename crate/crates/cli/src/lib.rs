//! The `cogwalk` command line and the human-session HTTP API.

pub mod api;
pub mod args;
pub mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Status;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Parses `argv` and runs the chosen subcommand, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Validate { manifest } => commands::validate(&manifest, &mut out),
        Command::Walk(a) => commands::walk(&a, &mut out),
        Command::Replay(a) => commands::replay(&a, &mut out),
        Command::RateScreens(a) => commands::rate(&a, &mut out),
        Command::Metrics(a) => commands::metrics(&a, &mut std::io::stderr()),
        Command::Serve(a) => serve(a),
    };
    let _ = out.flush();
    match result {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Findings) => EXIT_FINDINGS,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn serve(a: args::ServeArgs) -> anyhow::Result<Status> {
    let graph = cogwalk_core::graph::load_app_graph(&a.manifest)?;
    let state = Arc::new(api::ApiState::new(graph, a.traces_out, a.probe_humans));
    let rt = tokio::runtime::Runtime::new()?;
    let addr = format!("{}:{}", a.host, a.port);
    rt.block_on(api::serve(state, &addr, a.static_dir))?;
    Ok(Status::Ok)
}
