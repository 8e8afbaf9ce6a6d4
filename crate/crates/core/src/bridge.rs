//! Client side of the external scoring protocol.
//!
//! The child process prints `{"protocol":"augcode-score","version":1}` once,
//! then answers each request line `{"id","x_tokens","y_tokens"}` with
//! `{"id","score"}` or `{"id","error"}`, in any order.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{PreparedScores, ScoreError, Scorer};

pub const PROTOCOL: &str = "augcode-score";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("could not start scorer {command:?}: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("scorer sent no handshake within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("scorer exited before the handshake")]
    ExitedEarly,
    #[error("bad handshake: {0}")]
    BadHandshake(String),
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    /// Run through `sh -c`.
    pub command: String,
    pub handshake_timeout: Duration,
    /// Longest silence tolerated while responses are outstanding.
    pub response_timeout: Duration,
}

impl BridgeConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            handshake_timeout: Duration::from_secs(30),
            response_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: i64,
    x_tokens: &'a [String],
    y_tokens: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    id: i64,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct Handshake {
    protocol: String,
    version: u32,
}

enum Line {
    Text(String),
    Eof,
}

struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<Line>,
    next_id: i64,
    /// Set after any transport or protocol failure; the session is unusable.
    broken: Option<ScoreError>,
}

/// A [`Scorer`] backed by a long-running child process.
pub struct BridgeScorer {
    cfg: BridgeConfig,
    session: Mutex<Session>,
}

impl BridgeScorer {
    pub fn spawn(cfg: BridgeConfig) -> Result<Self, BridgeError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cfg.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                command: cfg.command.clone(),
                source,
            })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(Line::Text(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(Line::Eof);
        });
        let mut session = Session {
            child,
            stdin: Some(stdin),
            lines: rx,
            next_id: 1,
            broken: None,
        };
        let first = match session.lines.recv_timeout(cfg.handshake_timeout) {
            Ok(Line::Text(t)) => t,
            Ok(Line::Eof) | Err(RecvTimeoutError::Disconnected) => {
                session.shutdown();
                return Err(BridgeError::ExitedEarly);
            }
            Err(RecvTimeoutError::Timeout) => {
                session.shutdown();
                return Err(BridgeError::HandshakeTimeout(cfg.handshake_timeout));
            }
        };
        let hs: Handshake = match serde_json::from_str(&first) {
            Ok(h) => h,
            Err(e) => {
                session.shutdown();
                return Err(BridgeError::BadHandshake(format!("{e}: {first:?}")));
            }
        };
        if hs.protocol != PROTOCOL || hs.version != PROTOCOL_VERSION {
            session.shutdown();
            return Err(BridgeError::BadHandshake(format!("unsupported {} v{}", hs.protocol, hs.version)));
        }
        Ok(Self {
            cfg,
            session: Mutex::new(session),
        })
    }

    /// Scores `(x, y)` pairs, pipelining every request before collecting responses.
    pub fn score_pairs(&self, pairs: &[(&[String], &[String])]) -> Result<Vec<f64>, ScoreError> {
        let mut s = self.session.lock().map_err(|_| ScoreError::Transient("session lock poisoned".into()))?;
        if let Some(e) = &s.broken {
            return Err(e.clone());
        }
        let result = s.exchange(pairs, self.cfg.response_timeout);
        if let Err(e) = &result {
            if !matches!(e, ScoreError::Remote { .. } | ScoreError::NonFinite) {
                s.broken = Some(e.clone());
            }
        }
        result
    }
}

impl Session {
    fn exchange(&mut self, pairs: &[(&[String], &[String])], timeout: Duration) -> Result<Vec<f64>, ScoreError> {
        let first_id = self.next_id;
        self.next_id += pairs.len() as i64;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ScoreError::Transient("scorer input closed".into()))?;
        let broken = |e: std::io::Error| ScoreError::Transient(format!("writing to scorer: {e}"));
        for (i, (x, y)) in pairs.iter().enumerate() {
            let req = Request {
                id: first_id + i as i64,
                x_tokens: x,
                y_tokens: y,
            };
            serde_json::to_writer(&mut *stdin, &req).map_err(|e| broken(e.into()))?;
            stdin.write_all(b"\n").map_err(broken)?;
        }
        stdin.flush().map_err(broken)?;

        let mut out: Vec<Option<f64>> = vec![None; pairs.len()];
        let mut pending = pairs.len();
        let mut remote_error: Option<ScoreError> = None;
        let mut deadline = Instant::now() + timeout;
        while pending > 0 {
            let wait = deadline.saturating_duration_since(Instant::now());
            let text = match self.lines.recv_timeout(wait) {
                Ok(Line::Text(t)) => t,
                Ok(Line::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(ScoreError::Transient(format!("scorer exited with {pending} responses outstanding")))
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ScoreError::Transient(format!("no response for {timeout:?}, {pending} outstanding")))
                }
            };
            deadline = Instant::now() + timeout;
            if text.trim().is_empty() {
                continue;
            }
            let resp: Response = serde_json::from_str(&text)
                .map_err(|e| ScoreError::Protocol(format!("unparseable response {text:?}: {e}")))?;
            let offset = resp.id - first_id;
            if resp.id == -1 {
                return Err(ScoreError::Protocol(format!(
                    "scorer could not parse a request: {}",
                    resp.error.unwrap_or_default()
                )));
            }
            if offset < 0 || offset >= pairs.len() as i64 {
                return Err(ScoreError::Protocol(format!("response for unknown id {}", resp.id)));
            }
            let slot = &mut out[offset as usize];
            if slot.is_some() {
                return Err(ScoreError::Protocol(format!("duplicate response for id {}", resp.id)));
            }
            match (resp.score, resp.error) {
                (_, Some(message)) => {
                    remote_error.get_or_insert(ScoreError::Remote { id: resp.id, message });
                    *slot = Some(f64::NAN);
                }
                (Some(v), None) => *slot = Some(v),
                (None, None) => return Err(ScoreError::Protocol(format!("response {} has neither score nor error", resp.id))),
            }
            pending -= 1;
        }
        if let Some(e) = remote_error {
            return Err(e);
        }
        let scores: Vec<f64> = out.into_iter().map(|v| v.expect("all answered")).collect();
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::NonFinite);
        }
        Ok(scores)
    }

    fn shutdown(&mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for BridgeScorer {
    fn drop(&mut self) {
        if let Ok(s) = self.session.get_mut() {
            s.shutdown();
        }
    }
}

struct BridgePrepared<'s> {
    bridge: &'s BridgeScorer,
    queries: Vec<Vec<String>>,
    codes: Vec<Vec<String>>,
}

impl PreparedScores for BridgePrepared<'_> {
    fn score(&mut self, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ScoreError> {
        let refs: Vec<(&[String], &[String])> = pairs
            .iter()
            .map(|&(q, c)| (self.queries[q].as_slice(), self.codes[c].as_slice()))
            .collect();
        self.bridge.score_pairs(&refs)
    }
}

impl Scorer for BridgeScorer {
    fn prepare<'s>(
        &'s self,
        queries: &[&[String]],
        codes: &[&[String]],
    ) -> Result<Box<dyn PreparedScores + 's>, ScoreError> {
        Ok(Box::new(BridgePrepared {
            bridge: self,
            queries: queries.iter().map(|q| q.to_vec()).collect(),
            codes: codes.iter().map(|c| c.to_vec()).collect(),
        }))
    }
}
