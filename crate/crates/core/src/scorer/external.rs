//! JSON-lines scorer protocol.
//!
//! The client writes one request per line and reads one response per line:
//!
//! ```text
//! -> {"id":3,"pairs":[{"src":"A job .","hyp":"The job ."}]}
//! <- {"id":3,"scores":[-12.5]}
//! ```
//!
//! A bridge may answer `{"id":3,"error":"..."}` instead; malformed request
//! lines are answered with id `-1`. The same protocol runs over a child
//! process's stdio or a TCP stream.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerError};
use crate::types::Sentence;

pub const DEFAULT_MAX_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command spawned as a child; requests go to its stdin.
    Command(String),
    /// `host:port` of a listening bridge.
    Tcp(String),
}

impl Endpoint {
    /// `host:port` with a numeric port and no whitespace is TCP; anything else
    /// is a command line.
    pub fn parse(target: &str) -> Endpoint {
        let looks_tcp = !target.contains(char::is_whitespace)
            && target
                .rsplit_once(':')
                .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        if looks_tcp {
            Endpoint::Tcp(target.to_owned())
        } else {
            Endpoint::Command(target.to_owned())
        }
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub(crate) struct Pair<'a> {
    #[serde(borrow)]
    pub src: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    pub hyp: std::borrow::Cow<'a, str>,
}

#[derive(Serialize, Deserialize, Debug)]
pub(crate) struct Request<'a> {
    pub id: i64,
    #[serde(borrow)]
    pub pairs: Vec<Pair<'a>>,
}

#[derive(Serialize, Deserialize, Debug)]
pub(crate) struct Response {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct State {
    conn: Option<Connection>,
    next_id: i64,
}

/// Client for an external scorer bridge. Requests are serialized: one batch
/// is in flight at a time.
pub struct ExternalScorerClient {
    endpoint: Endpoint,
    max_batch: usize,
    name: String,
    state: Mutex<State>,
}

enum Failure {
    Transport(io::Error),
    Fatal(ScorerError),
}

impl ExternalScorerClient {
    pub fn new(endpoint: Endpoint) -> Self {
        let name = match &endpoint {
            Endpoint::Command(c) => format!("external:{c}"),
            Endpoint::Tcp(a) => format!("external:{a}"),
        };
        ExternalScorerClient {
            endpoint,
            max_batch: DEFAULT_MAX_BATCH,
            name,
            state: Mutex::new(State { conn: None, next_id: 0 }),
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn connect(&self) -> io::Result<Connection> {
        match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = BufReader::new(stream.try_clone()?);
                Ok(Connection {
                    reader: Box::new(reader),
                    writer: Box::new(stream),
                    child: None,
                })
            }
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
                Ok(Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Box::new(stdin),
                    child: Some(child),
                })
            }
        }
    }

    /// Scores pairs in order, splitting them into batches of at most
    /// `max_batch`.
    pub fn score_pairs(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.max_batch) {
            let texts: Vec<(String, String)> = chunk.iter().map(|(s, h)| (s.to_string(), h.to_string())).collect();
            let id = state.next_id;
            state.next_id += 1;
            let request = Request {
                id,
                pairs: texts
                    .iter()
                    .map(|(s, h)| Pair {
                        src: s.as_str().into(),
                        hyp: h.as_str().into(),
                    })
                    .collect(),
            };
            let mut line = serde_json::to_string(&request).expect("request serializes");
            line.push('\n');
            out.extend(self.round_trip(&mut state, &line, id, chunk.len())?);
        }
        Ok(out)
    }

    fn round_trip(&self, state: &mut State, line: &str, id: i64, expected: usize) -> Result<Vec<f64>, ScorerError> {
        let mut last_err = None;
        for _attempt in 0..2 {
            match self.try_once(state, line, id, expected) {
                Ok(scores) => return Ok(scores),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transport(e)) => {
                    state.conn = None;
                    last_err = Some(e);
                }
            }
        }
        Err(ScorerError::BridgeUnavailable(format!(
            "{}: {}",
            self.name,
            last_err.expect("loop ran")
        )))
    }

    fn try_once(&self, state: &mut State, line: &str, id: i64, expected: usize) -> Result<Vec<f64>, Failure> {
        if state.conn.is_none() {
            state.conn = Some(self.connect().map_err(Failure::Transport)?);
        }
        let conn = state.conn.as_mut().expect("just connected");
        conn.writer
            .write_all(line.as_bytes())
            .and_then(|()| conn.writer.flush())
            .map_err(Failure::Transport)?;
        let mut reply = String::new();
        let n = conn.reader.read_line(&mut reply).map_err(Failure::Transport)?;
        if n == 0 {
            return Err(Failure::Transport(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "bridge closed the stream",
            )));
        }
        let response: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| Failure::Fatal(ScorerError::Protocol(format!("malformed response {reply:?}: {e}"))))?;
        if response.id != id {
            return Err(Failure::Fatal(ScorerError::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            ))));
        }
        if let Some(err) = response.error {
            return Err(Failure::Fatal(ScorerError::Remote(err)));
        }
        let scores = response
            .scores
            .ok_or_else(|| Failure::Fatal(ScorerError::Protocol("response has neither scores nor error".into())))?;
        if scores.len() != expected {
            return Err(Failure::Fatal(ScorerError::ScoreLengthMismatch {
                expected,
                got: scores.len(),
            }));
        }
        Ok(scores)
    }
}

impl Scorer for ExternalScorerClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, source: &Sentence, hypothesis: &Sentence) -> Result<f64, ScorerError> {
        Ok(self.score_pairs(&[(source, hypothesis)])?[0])
    }

    fn batch_score(&self, pairs: &[(&Sentence, &Sentence)]) -> Result<Vec<f64>, ScorerError> {
        self.score_pairs(pairs)
    }
}

/// Serves `scorer` over the protocol until `reader` reaches end of input.
/// Bad lines produce error responses; only I/O failures end the loop early.
pub fn serve(scorer: &dyn Scorer, reader: impl BufRead, mut writer: impl Write) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response {
                id: -1,
                scores: None,
                error: Some(format!("malformed request: {e}")),
            },
            Ok(req) => {
                let sentences: Vec<(Sentence, Sentence)> = req
                    .pairs
                    .iter()
                    .map(|p| (Sentence::parse(&p.src), Sentence::parse(&p.hyp)))
                    .collect();
                let refs: Vec<(&Sentence, &Sentence)> = sentences.iter().map(|(s, h)| (s, h)).collect();
                match scorer.batch_score(&refs) {
                    Ok(scores) => Response {
                        id: req.id,
                        scores: Some(scores),
                        error: None,
                    },
                    Err(e) => Response {
                        id: req.id,
                        scores: None,
                        error: Some(e.to_string()),
                    },
                }
            }
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
