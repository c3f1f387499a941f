//! Stand-in render bridge that answers from a fixture JSONL file.
//!
//! Usage: fixture-bridge FIXTURES.jsonl [--crash-after N]
//!
//! A fixture with `"crash": true` makes the process exit when requested.
//! `--crash-after N` exits after N answered requests.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use pagebench::render::{FixtureRenderer, RenderRequest, RenderResponse};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut path = None;
    let mut crash_after: Option<u64> = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--crash-after" => crash_after = it.next().and_then(|n| n.parse().ok()),
            _ => path = Some(a.clone()),
        }
    }
    let Some(path) = path else {
        eprintln!("usage: fixture-bridge FIXTURES.jsonl [--crash-after N]");
        return ExitCode::from(2);
    };
    let fixtures = match FixtureRenderer::load(path.as_ref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("fixture-bridge: {e}");
            return ExitCode::from(2);
        }
    };

    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut answered = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if crash_after.is_some_and(|n| answered >= n) {
            return ExitCode::from(3);
        }
        let response = match serde_json::from_str::<RenderRequest>(&line) {
            Ok(req) => {
                if fixtures.get(&req.latex).is_some_and(|e| e.crash) {
                    return ExitCode::from(3);
                }
                fixtures.respond(&req)
            }
            Err(e) => RenderResponse::failure("", format!("bad request: {e}")),
        };
        let out = serde_json::to_string(&response).expect("serializable response");
        if writeln!(stdout, "{out}").and_then(|_| stdout.flush()).is_err() {
            break;
        }
        answered += 1;
    }
    ExitCode::SUCCESS
}
