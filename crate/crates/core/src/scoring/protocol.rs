//! Scorer wire protocol, version 1.
//!
//! Newline-delimited JSON over a child process's stdin/stdout or a TCP
//! socket. The client opens with `{"hello":{"proto":1}}` and the server
//! answers `{"hello":{"proto":1,"name":...}}`. Each request line
//! `{"id":N,"context":...,"targets":[...]}` is answered by either
//! `{"id":N,"scores":[...]}` or `{"id":N,"error":"..."}`. Scores are natural
//! log; `-inf` travels as `null` (a bare `-Infinity` literal is accepted on
//! input). Responses may arrive out of order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Scorer, ScorerError};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub context: String,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub id: u64,
    pub scores: Vec<f64>,
}

impl ScoreRequest {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

impl ScoreResponse {
    pub fn to_line(&self) -> String {
        let scores: Vec<Value> = self.scores.iter().map(|&s| score_to_json(s)).collect();
        json!({ "id": self.id, "scores": scores }).to_string()
    }
}

fn score_to_json(s: f64) -> Value {
    if s.is_finite() {
        json!(s)
    } else {
        Value::Null
    }
}

/// Where an out-of-process scorer lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command line; the child speaks the protocol on stdin/stdout.
    Command(String),
    /// `host:port`.
    Tcp(String),
}

impl Endpoint {
    /// `tcp://host:port` selects TCP; anything else is a command line.
    pub fn parse(spec: &str) -> Self {
        match spec.strip_prefix("tcp://") {
            Some(addr) => Endpoint::Tcp(addr.to_owned()),
            None => Endpoint::Command(spec.to_owned()),
        }
    }
}

/// A parsed server line.
#[derive(Debug, Clone, PartialEq)]
enum Reply {
    Scores { id: u64, scores: Vec<f64> },
    Error { id: u64, message: String },
}

impl Reply {
    fn id(&self) -> u64 {
        match self {
            Reply::Scores { id, .. } | Reply::Error { id, .. } => *id,
        }
    }
}

/// Rewrites bare `-Infinity` literals outside strings to `null`.
fn normalize_infinities(line: &str) -> String {
    const LIT: &str = "-Infinity";
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
        } else if c == '"' {
            in_string = true;
        } else if rest.starts_with(LIT) {
            out.push_str("null");
            rest = &rest[LIT.len()..];
            continue;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

fn parse_reply(line: &str) -> Result<Reply, ScorerError> {
    let malformed = |id: Option<u64>, detail: String| ScorerError::MalformedResponse { id, detail };
    let value: Value =
        serde_json::from_str(&normalize_infinities(line)).map_err(|e| malformed(None, format!("{e}: {line}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(None, format!("not a JSON object: {line}")))?;
    let id = obj
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed(None, format!("missing or invalid id: {line}")))?;
    if let Some(err) = obj.get("error") {
        let message = err.as_str().map(str::to_owned).unwrap_or_else(|| err.to_string());
        return Ok(Reply::Error { id, message });
    }
    let raw = obj
        .get("scores")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(Some(id), format!("missing scores array: {line}")))?;
    let scores = raw
        .iter()
        .map(|v| match v {
            Value::Null => Ok(f64::NEG_INFINITY),
            other => other
                .as_f64()
                .ok_or_else(|| malformed(Some(id), format!("non-numeric score {other}"))),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Reply::Scores { id, scores })
}

struct Session {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    early: HashMap<u64, Reply>,
    child: Option<Child>,
}

impl Session {
    fn send(&mut self, line: &str) -> Result<(), ScorerError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self, waiting_for: u64, deadline: Instant, timeout: Duration) -> Result<String, ScorerError> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(ScorerError::Timeout {
                id: waiting_for,
                timeout,
            }),
            Err(RecvTimeoutError::Disconnected) => Err(ScorerError::Disconnected { id: waiting_for }),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved child exit on EOF
        self.writer = Box::new(std::io::sink());
        if let Some(child) = self.child.as_mut() {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client side of the wire protocol. Requests on one client are
/// serialized; the client itself is `Sync`.
pub struct ProtocolClient {
    session: Mutex<Session>,
    name: String,
    timeout: Duration,
}

impl std::fmt::Debug for ProtocolClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtocolClient")
            .field("name", &self.name)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl ProtocolClient {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ScorerError> {
        match endpoint {
            Endpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::handshake(BufReader::new(stdout), stdin, Some(child), timeout)
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                let reader = BufReader::new(stream.try_clone()?);
                Self::handshake(reader, stream, None, timeout)
            }
        }
    }

    /// Wraps an already-open byte stream pair.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, ScorerError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(reader, writer, None, timeout)
    }

    fn handshake<R, W>(reader: R, writer: W, child: Option<Child>, timeout: Duration) -> Result<Self, ScorerError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Session {
            writer: Box::new(writer),
            lines: rx,
            next_id: 1,
            early: HashMap::new(),
            child,
        };
        session.send(&json!({ "hello": { "proto": PROTOCOL_VERSION } }).to_string())?;
        let line = session
            .recv(0, Instant::now() + timeout, timeout)
            .map_err(|e| ScorerError::Handshake(e.to_string()))?;
        let value: Value = serde_json::from_str(&line).map_err(|e| ScorerError::Handshake(format!("{e}: {line}")))?;
        let hello = value
            .get("hello")
            .ok_or_else(|| ScorerError::Handshake(format!("expected hello, got {line}")))?;
        if hello.get("proto").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
            return Err(ScorerError::Handshake(format!("unsupported protocol: {line}")));
        }
        let name = hello.get("name").and_then(Value::as_str).unwrap_or("remote").to_owned();
        Ok(Self {
            session: Mutex::new(session),
            name,
            timeout,
        })
    }

    pub fn server_name(&self) -> &str {
        &self.name
    }

    /// Builds a request with the next session id.
    pub fn request(&self, context: &str, targets: &[String]) -> ScoreRequest {
        let mut session = self.session.lock().expect("protocol session poisoned");
        let id = session.next_id;
        session.next_id += 1;
        ScoreRequest {
            id,
            context: context.to_owned(),
            targets: targets.to_vec(),
        }
    }

    pub fn protocol_score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let mut out = self.score_batch(std::slice::from_ref(request))?;
        Ok(out.pop().expect("one response per request"))
    }

    /// Sends every request before reading, then returns responses in
    /// request order regardless of arrival order.
    pub fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        let mut session = self.session.lock().expect("protocol session poisoned");
        for r in requests {
            if r.targets.is_empty() {
                return Err(ScorerError::EmptyTargets);
            }
            session.next_id = session.next_id.max(r.id + 1);
        }
        for r in requests {
            session.send(&r.to_line())?;
        }
        let deadline = Instant::now() + self.timeout;
        let mut got: HashMap<u64, Reply> = HashMap::new();
        for r in requests {
            if let Some(reply) = session.early.remove(&r.id) {
                got.insert(r.id, reply);
            }
        }
        while got.len() < requests.len() {
            let waiting = requests
                .iter()
                .find(|r| !got.contains_key(&r.id))
                .map(|r| r.id)
                .expect("some request outstanding");
            let line = session.recv(waiting, deadline, self.timeout)?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = parse_reply(&line)?;
            let id = reply.id();
            if requests.iter().any(|r| r.id == id) && !got.contains_key(&id) {
                got.insert(id, reply);
            } else {
                return Err(ScorerError::IdMismatch {
                    expected: waiting,
                    got: id,
                });
            }
        }
        requests
            .iter()
            .map(|r| match got.remove(&r.id).expect("collected") {
                Reply::Error { id, message } => Err(ScorerError::Backend { id, message }),
                Reply::Scores { id, scores } => {
                    if scores.len() != r.targets.len() {
                        Err(ScorerError::LengthMismatch {
                            id,
                            expected: r.targets.len(),
                            got: scores.len(),
                        })
                    } else if let Some(bad) = scores.iter().find(|s| s.is_nan() || **s == f64::INFINITY) {
                        Err(ScorerError::MalformedResponse {
                            id: Some(id),
                            detail: format!("invalid score {bad}"),
                        })
                    } else {
                        Ok(ScoreResponse { id, scores })
                    }
                }
            })
            .collect()
    }
}

impl Scorer for ProtocolClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
        if targets.is_empty() {
            return Err(ScorerError::EmptyTargets);
        }
        let request = self.request(context, targets);
        Ok(self.protocol_score(&request)?.scores)
    }
}

/// Serves `scorer` over one connection until EOF. Bad lines get an error
/// object (id -1 when none can be recovered) and the session continues.
pub fn serve<S, R, W>(scorer: &S, name: &str, reader: R, mut writer: W) -> std::io::Result<()>
where
    S: Scorer + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Err(e) => json!({ "id": -1, "error": format!("malformed request: {e}") }),
            Ok(v) if v.get("hello").is_some() => {
                json!({ "hello": { "proto": PROTOCOL_VERSION, "name": name } })
            }
            Ok(v) => {
                let id = v.get("id").cloned().unwrap_or(json!(-1));
                match serde_json::from_value::<ScoreRequest>(v) {
                    Err(e) => json!({ "id": id, "error": format!("malformed request: {e}") }),
                    Ok(req) => match scorer.score(&req.context, &req.targets) {
                        Ok(scores) => {
                            let scores: Vec<Value> = scores.into_iter().map(score_to_json).collect();
                            json!({ "id": req.id, "scores": scores })
                        }
                        Err(e) => json!({ "id": req.id, "error": e.to_string() }),
                    },
                }
            }
        };
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}
