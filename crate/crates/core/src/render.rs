//! Client side of the KaTeX render bridge.
//!
//! The bridge is a child process speaking line-delimited JSON on
//! stdin/stdout, one request line answered by one response line:
//!
//! ```text
//! {"id":"r1","latex":"x^2","display":true}
//! {"id":"r1","ok":true,"symbols":[{"g":"x","x0":0,"y0":8,"x1":10,"y1":22},{"g":"2","x0":10,"y0":2,"x1":16,"y1":12}]}
//! ```
//!
//! [`BridgePool`] keeps up to K bridge processes and restarts a crashed one,
//! retrying the batch once. [`FixtureRenderer`] answers from recorded
//! responses and needs no bridge at all.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// One rendered glyph with its box in render space (y grows downward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolBox {
    #[serde(rename = "g")]
    pub glyph: String,
    #[serde(serialize_with = "compact_f64")]
    pub x0: f64,
    #[serde(serialize_with = "compact_f64")]
    pub y0: f64,
    #[serde(serialize_with = "compact_f64")]
    pub x1: f64,
    #[serde(serialize_with = "compact_f64")]
    pub y1: f64,
}

/// Integral values go on the wire as integers (`0`, not `0.0`).
fn compact_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

impl SymbolBox {
    pub fn new(glyph: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        SymbolBox {
            glyph: glyph.into(),
            x0,
            y0,
            x1,
            y1,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn is_valid(&self) -> bool {
        !self.glyph.is_empty() && self.x0 < self.x1 && self.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub id: String,
    pub latex: String,
    #[serde(rename = "display")]
    pub display_mode: bool,
}

impl RenderRequest {
    pub fn new(id: impl Into<String>, latex: impl Into<String>, display_mode: bool) -> Self {
        RenderRequest {
            id: id.into(),
            latex: latex.into(),
            display_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub id: String,
    pub ok: bool,
    #[serde(default)]
    pub symbols: Vec<SymbolBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RenderResponse {
    pub fn failure(id: impl Into<String>, error: impl Into<String>) -> Self {
        RenderResponse {
            id: id.into(),
            ok: false,
            symbols: Vec::new(),
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("renderer unavailable: {0}")]
    Unavailable(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
}

/// Anything that turns LaTeX into symbol boxes.
pub trait Renderer: Send + Sync {
    /// One response per request, ids preserved.
    fn render_batch(&self, requests: &[RenderRequest]) -> Result<Vec<RenderResponse>, RenderError>;
}

/// Whitespace-insensitive key for recorded renderings.
pub fn fixture_key(latex: &str) -> String {
    latex.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A recorded bridge answer for one LaTeX string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub latex: String,
    pub ok: bool,
    #[serde(default)]
    pub symbols: Vec<SymbolBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Makes `fixture-bridge` exit instead of answering; used to exercise
    /// crash recovery.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub crash: bool,
}

/// Renderer backed by recorded responses. Unknown inputs render as errors.
#[derive(Debug, Clone, Default)]
pub struct FixtureRenderer {
    entries: HashMap<String, FixtureEntry>,
}

impl FixtureRenderer {
    pub fn new(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        FixtureRenderer {
            entries: entries
                .into_iter()
                .map(|e| (fixture_key(&e.latex), e))
                .collect(),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RenderError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| RenderError::Protocol(format!("fixture line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(FixtureRenderer::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, RenderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RenderError::Unavailable(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn get(&self, latex: &str) -> Option<&FixtureEntry> {
        self.entries.get(&fixture_key(latex))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn respond(&self, request: &RenderRequest) -> RenderResponse {
        match self.get(&request.latex) {
            Some(e) if e.ok => RenderResponse {
                id: request.id.clone(),
                ok: true,
                symbols: e.symbols.clone(),
                error: None,
            },
            Some(e) => RenderResponse::failure(
                request.id.clone(),
                e.error.clone().unwrap_or_else(|| "render failed".into()),
            ),
            None => RenderResponse::failure(request.id.clone(), "no recorded rendering"),
        }
    }
}

impl Renderer for FixtureRenderer {
    fn render_batch(&self, requests: &[RenderRequest]) -> Result<Vec<RenderResponse>, RenderError> {
        Ok(requests.iter().map(|r| self.respond(r)).collect())
    }
}

/// Renderer that is never available; checks that need it error out.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRenderer;

impl Renderer for NoRenderer {
    fn render_batch(&self, _: &[RenderRequest]) -> Result<Vec<RenderResponse>, RenderError> {
        Err(RenderError::Unavailable("no renderer configured".into()))
    }
}

struct BridgeProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl BridgeProcess {
    fn spawn(command: &[String]) -> Result<Self, RenderError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| RenderError::Unavailable("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| RenderError::Unavailable(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(BridgeProcess {
            child,
            stdin,
            stdout,
        })
    }

    fn round_trip(&mut self, request: &RenderRequest) -> Result<RenderResponse, String> {
        let mut line = serde_json::to_string(request).map_err(|e| e.to_string())?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| format!("write: {e}"))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| format!("read: {e}"))?;
        if n == 0 {
            return Err("bridge closed its output".into());
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| format!("bad response line: {e}"))
    }

    fn run_batch(&mut self, requests: &[RenderRequest]) -> Result<Vec<RenderResponse>, String> {
        requests
            .iter()
            .map(|r| {
                let resp = self.round_trip(r)?;
                if resp.id != r.id {
                    return Err(format!("response id `{}` for request `{}`", resp.id, r.id));
                }
                Ok(resp)
            })
            .collect()
    }
}

impl Drop for BridgeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct PoolState {
    idle: Vec<BridgeProcess>,
    live: usize,
}

/// Pool of at most `size` bridge processes, spawned lazily.
pub struct BridgePool {
    command: Vec<String>,
    size: usize,
    state: Mutex<PoolState>,
    freed: Condvar,
}

impl BridgePool {
    pub fn new(command: Vec<String>, size: usize) -> Self {
        BridgePool {
            command,
            size: size.max(1),
            state: Mutex::new(PoolState {
                idle: Vec::new(),
                live: 0,
            }),
            freed: Condvar::new(),
        }
    }

    /// Spawn one process up front so a bad command fails early.
    pub fn check(&self) -> Result<(), RenderError> {
        let proc = self.acquire()?;
        self.release(Some(proc));
        Ok(())
    }

    fn acquire(&self) -> Result<BridgeProcess, RenderError> {
        let mut state = self.state.lock().expect("pool lock");
        loop {
            if let Some(p) = state.idle.pop() {
                return Ok(p);
            }
            if state.live < self.size {
                state.live += 1;
                drop(state);
                return BridgeProcess::spawn(&self.command).inspect_err(|_| {
                    self.state.lock().expect("pool lock").live -= 1;
                    self.freed.notify_one();
                });
            }
            state = self.freed.wait(state).expect("pool lock");
        }
    }

    fn release(&self, proc: Option<BridgeProcess>) {
        let mut state = self.state.lock().expect("pool lock");
        match proc {
            Some(p) => state.idle.push(p),
            None => state.live -= 1,
        }
        drop(state);
        self.freed.notify_one();
    }
}

impl Renderer for BridgePool {
    fn render_batch(&self, requests: &[RenderRequest]) -> Result<Vec<RenderResponse>, RenderError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let mut last_err = String::new();
        for attempt in 0..2 {
            let mut proc = self.acquire()?;
            match proc.run_batch(requests) {
                Ok(responses) => {
                    self.release(Some(proc));
                    return Ok(responses);
                }
                Err(e) => {
                    log::warn!("render bridge failed (attempt {}): {e}", attempt + 1);
                    last_err = e;
                    drop(proc);
                    self.release(None);
                }
            }
        }
        Err(RenderError::Unavailable(last_err))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let req = RenderRequest::new("a1", "x^2", true);
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"id":"a1","latex":"x^2","display":true}"#
        );
    }

    #[test]
    fn response_wire_format() {
        let resp = RenderResponse {
            id: "a1".into(),
            ok: true,
            symbols: vec![SymbolBox::new("x", 0.0, 0.0, 8.0, 12.0)],
            error: None,
        };
        let line = serde_json::to_string(&resp).unwrap();
        assert_eq!(
            line,
            r#"{"id":"a1","ok":true,"symbols":[{"g":"x","x0":0,"y0":0,"x1":8,"y1":12}]}"#
        );
        let back: RenderResponse = serde_json::from_str(&line).unwrap();
        assert_eq!(back, resp);
        let fractional = SymbolBox::new("y", 0.5, 1.0, 2.25, 3.0);
        assert_eq!(
            serde_json::to_string(&fractional).unwrap(),
            r#"{"g":"y","x0":0.5,"y0":1,"x1":2.25,"y1":3}"#
        );
    }

    #[test]
    fn error_response_parses() {
        let resp: RenderResponse =
            serde_json::from_str(r#"{"id":"z","ok":false,"error":"ParseError: bad"}"#).unwrap();
        assert!(!resp.ok);
        assert!(resp.symbols.is_empty());
        assert_eq!(resp.error.as_deref(), Some("ParseError: bad"));
    }

    #[test]
    fn fixture_lookup_ignores_spacing() {
        let r = FixtureRenderer::from_jsonl(
            r#"{"latex":"x ^ 2","ok":true,"symbols":[{"g":"x","x0":0,"y0":0,"x1":1,"y1":1}]}"#,
        )
        .unwrap();
        let out = r
            .render_batch(&[
                RenderRequest::new("1", "x  ^ 2", true),
                RenderRequest::new("2", "y", true),
            ])
            .unwrap();
        assert!(out[0].ok);
        assert_eq!(out[1].id, "2");
        assert!(!out[1].ok);
    }

    #[test]
    fn missing_bridge_is_unavailable() {
        let pool = BridgePool::new(vec!["/nonexistent/bridge-binary".into()], 2);
        let err = pool
            .render_batch(&[RenderRequest::new("1", "x", true)])
            .unwrap_err();
        assert!(matches!(err, RenderError::Unavailable(_)));
        assert!(NoRenderer.render_batch(&[]).is_err());
    }
}
