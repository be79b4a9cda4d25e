//! Sources of binary responses for adaptive sessions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::bank::ItemBank;
use crate::data::ResponseMatrix;
use crate::irt::icc_3pl;
use crate::rng::{substream, StreamRng};

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum ResponderError {
    #[error("unknown respondent `{0}`")]
    UnknownRespondent(String),
    #[error("no response for item `{item}` from `{respondent}`")]
    MissingResponse { respondent: String, item: String },
    #[error("item `{0}` is not in the bank")]
    UnknownItem(String),
    #[error("command timed out after {0:?}")]
    Timeout(Duration),
    #[error("command exited with {status}: {stderr}")]
    ExitStatus { status: String, stderr: String },
    #[error("unparseable command output {output:?}: {message}")]
    Output { output: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("items content {path}: {message}")]
    Content { path: String, message: String },
}

/// Supplies the response of one respondent to each administered item.
pub trait Responder: Send {
    fn respondent_id(&self) -> &str;
    fn respond(&mut self, item_id: &str) -> Result<bool, ResponderError>;
}

/// Replays a stored response-matrix row.
#[derive(Debug, Clone)]
pub struct MatrixResponder {
    matrix: Arc<ResponseMatrix>,
    model_id: String,
    row: usize,
}

impl MatrixResponder {
    pub fn new(matrix: Arc<ResponseMatrix>, model_id: &str) -> Result<Self, ResponderError> {
        let row = matrix.model_index(model_id).ok_or_else(|| ResponderError::UnknownRespondent(model_id.to_owned()))?;
        Ok(Self { matrix, model_id: model_id.to_owned(), row })
    }
}

impl Responder for MatrixResponder {
    fn respondent_id(&self) -> &str {
        &self.model_id
    }

    fn respond(&mut self, item_id: &str) -> Result<bool, ResponderError> {
        self.matrix
            .item_index(item_id)
            .and_then(|j| self.matrix.get(self.row, j))
            .ok_or_else(|| ResponderError::MissingResponse { respondent: self.model_id.clone(), item: item_id.to_owned() })
    }
}

/// Draws 3PL responses at a fixed true ability from the stream `sim/<id>`.
#[derive(Debug, Clone)]
pub struct SimulatedResponder {
    id: String,
    theta_true: f64,
    bank: Arc<ItemBank>,
    rng: StreamRng,
}

impl SimulatedResponder {
    pub fn new(id: impl Into<String>, theta_true: f64, bank: Arc<ItemBank>, seed: u64) -> Self {
        let id = id.into();
        let rng = substream(seed, &format!("sim/{id}"));
        Self { id, theta_true, bank, rng }
    }

    pub fn theta_true(&self) -> f64 {
        self.theta_true
    }
}

impl Responder for SimulatedResponder {
    fn respondent_id(&self) -> &str {
        &self.id
    }

    fn respond(&mut self, item_id: &str) -> Result<bool, ResponderError> {
        let params = self.bank.params(item_id).ok_or_else(|| ResponderError::UnknownItem(item_id.to_owned()))?;
        let p = icc_3pl(params, self.theta_true);
        Ok(self.rng.gen::<f64>() < p)
    }
}

/// Optional per-item metadata (prompt, choices, anything else) forwarded to
/// external responders.
pub type ItemContent = BTreeMap<String, Map<String, Value>>;

/// Reads a JSON object keyed by item id whose values are objects.
pub fn load_item_content(path: &Path) -> Result<ItemContent, ResponderError> {
    let err = |message: String| ResponderError::Content { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// The request line written to an external command's standard input.
pub fn request_line(item_id: &str, meta: &Map<String, Value>) -> String {
    format!(
        "{{\"item_id\": {}, \"meta\": {}}}\n",
        serde_json::to_string(item_id).expect("string serializes"),
        serde_json::to_string(meta).expect("map serializes")
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reply {
    correct: u8,
}

/// Parses the first non-empty stdout line as `{"correct": 0|1}`.
pub fn parse_reply(stdout: &str) -> Result<bool, ResponderError> {
    let line = stdout.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let bad = |message: String| ResponderError::Output { output: line.to_owned(), message };
    let reply: Reply = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    match reply.correct {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(bad(format!("correct must be 0 or 1, got {other}"))),
    }
}

/// Runs `sh -c <command>` per item (`{item_id}` in the template is replaced),
/// sends the request line on stdin, and reads the reply from stdout.
#[derive(Debug, Clone)]
pub struct ExternalResponder {
    id: String,
    command: String,
    timeout: Duration,
    content: Arc<ItemContent>,
}

impl ExternalResponder {
    pub fn new(id: impl Into<String>, command: impl Into<String>, timeout: Duration, content: Arc<ItemContent>) -> Self {
        Self { id: id.into(), command: command.into(), timeout, content }
    }

    fn invoke(&self, item_id: &str) -> Result<bool, ResponderError> {
        let command = self.command.replace("{item_id}", item_id).replace("{respondent_id}", &self.id);
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let empty = Map::new();
        let payload = request_line(item_id, self.content.get(item_id).unwrap_or(&empty));
        let mut stdin = child.stdin.take().expect("piped");
        let writer = thread::spawn(move || {
            // a command that ignores stdin may close it early
            let _ = stdin.write_all(payload.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let out_reader = thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let err_reader = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let start = Instant::now();
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ResponderError::Timeout(self.timeout));
            }
            thread::sleep(Duration::from_millis(5));
        };
        let _ = writer.join();
        let out = out_reader.join().expect("reader thread")?;
        let err = err_reader.join().expect("reader thread");
        if !status.success() {
            return Err(ResponderError::ExitStatus { status: status.to_string(), stderr: err.trim().to_owned() });
        }
        parse_reply(&out)
    }
}

impl Responder for ExternalResponder {
    fn respondent_id(&self) -> &str {
        &self.id
    }

    fn respond(&mut self, item_id: &str) -> Result<bool, ResponderError> {
        self.invoke(item_id)
    }
}

/// Serializable description of a responder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponderSpec {
    Matrix {
        respondent_id: String,
        matrix: PathBuf,
    },
    Simulated {
        respondent_id: String,
        theta_true: f64,
        seed: u64,
    },
    External {
        respondent_id: String,
        command: String,
        #[serde(default)]
        timeout_secs: Option<f64>,
        #[serde(default)]
        items_content: Option<PathBuf>,
    },
}

impl ResponderSpec {
    pub fn respondent_id(&self) -> &str {
        match self {
            Self::Matrix { respondent_id, .. }
            | Self::Simulated { respondent_id, .. }
            | Self::External { respondent_id, .. } => respondent_id,
        }
    }

    pub fn build(&self, bank: &Arc<ItemBank>) -> Result<Box<dyn Responder>, ResponderError> {
        Ok(match self {
            Self::Matrix { respondent_id, matrix } => {
                let m = ResponseMatrix::load(matrix).map_err(|e| ResponderError::Content {
                    path: matrix.display().to_string(),
                    message: e.to_string(),
                })?;
                Box::new(MatrixResponder::new(Arc::new(m), respondent_id)?)
            }
            Self::Simulated { respondent_id, theta_true, seed } => {
                Box::new(SimulatedResponder::new(respondent_id.clone(), *theta_true, Arc::clone(bank), *seed))
            }
            Self::External { respondent_id, command, timeout_secs, items_content } => {
                let content = match items_content {
                    Some(path) => load_item_content(path)?,
                    None => ItemContent::new(),
                };
                let timeout = timeout_secs.map(Duration::from_secs_f64).unwrap_or(DEFAULT_EXTERNAL_TIMEOUT);
                Box::new(ExternalResponder::new(respondent_id.clone(), command.clone(), timeout, Arc::new(content)))
            }
        })
    }
}
