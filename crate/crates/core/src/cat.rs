//! Adaptive test sessions: nearest-difficulty first item, randomesque
//! maximum-information selection, EAP updates and precision-based stopping.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::ItemBank;
use crate::irt::{
    eap_of, fisher_info, AbilityEstimate, InfoForm, IrtError, ItemParameters, QuadratureGrid, TestRecord,
    DEFAULT_QUADRATURE_NODES, THETA_MAX, THETA_MIN,
};
use crate::respondents::Responder;
use crate::rng::{stream_id, substream, StreamRng};

pub const SESSION_LOG_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Stopping thresholds used for the standard three-level comparison.
pub const SE_PRESETS: [f64; 3] = [0.1, 0.2, 0.3];

#[derive(Debug, Error)]
pub enum CatError {
    #[error("invalid adaptive-test configuration: {0}")]
    Config(String),
    #[error("bank has {operational} operational items, fewer than min_items = {min_items}")]
    UndersizedBank { operational: usize, min_items: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("duplicate respondent identifier `{0}`")]
    DuplicateRespondent(String),
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error("session log {path}: {message}")]
    Log { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatConfig {
    pub se_threshold: f64,
    pub min_items: usize,
    pub max_items: usize,
    pub top_k: usize,
    pub info_form: InfoForm,
    pub rng_seed: u64,
    pub quadrature_nodes: usize,
}

impl Default for CatConfig {
    fn default() -> Self {
        Self {
            se_threshold: 0.3,
            min_items: 30,
            max_items: 500,
            top_k: 5,
            info_form: InfoForm::Paper,
            rng_seed: 0,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
        }
    }
}

impl CatConfig {
    pub fn validate(&self) -> Result<(), CatError> {
        if !(self.se_threshold > 0.0 && self.se_threshold.is_finite()) {
            return Err(CatError::Config(format!("se_threshold must be positive, got {}", self.se_threshold)));
        }
        if self.min_items == 0 || self.min_items > self.max_items {
            return Err(CatError::Config(format!(
                "need 0 < min_items ≤ max_items, got {} / {}",
                self.min_items, self.max_items
            )));
        }
        if self.top_k == 0 {
            return Err(CatError::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Result<QuadratureGrid, CatError> {
        Ok(QuadratureGrid::standard_normal(self.quadrature_nodes, THETA_MIN, THETA_MAX)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Converged,
    ExhaustedMax,
    BankExhausted,
    /// Responder failed; the partial record is kept.
    Aborted,
}

impl SessionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Active => "active",
            Self::Converged => "converged",
            Self::ExhaustedMax => "exhausted_max",
            Self::BankExhausted => "bank_exhausted",
            Self::Aborted => "aborted",
        }
    }
}

/// Stopping rule: converged needs `min_items` and a finite SE ≤ τ; otherwise
/// the length cap, then an empty pool, end the session.
pub fn stopping_rule(n_items: usize, se: f64, remaining: usize, config: &CatConfig) -> SessionStatus {
    if n_items >= config.min_items && se.is_finite() && se <= config.se_threshold {
        SessionStatus::Converged
    } else if n_items >= config.max_items {
        SessionStatus::ExhaustedMax
    } else if remaining == 0 {
        SessionStatus::BankExhausted
    } else {
        SessionStatus::Active
    }
}

/// One administered item, as written to the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub step: usize,
    pub item_id: String,
    pub response: u8,
    pub theta: f64,
    /// `null` while the administered items carry no information.
    pub se: Option<f64>,
    /// Information of the item at the ability estimate it was selected with.
    pub info_of_item: f64,
    /// Index drawn among the top-k candidates; `null` for the first item.
    pub rng_draw: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalLine {
    pub status: SessionStatus,
    pub theta: f64,
    pub se: Option<f64>,
    pub n_items: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    item_id: String,
    info: f64,
    rng_draw: Option<usize>,
}

/// Single-owner state of one adaptive test.
#[derive(Debug, Clone)]
pub struct Session {
    bank: Arc<ItemBank>,
    config: CatConfig,
    grid: QuadratureGrid,
    operational: Vec<usize>,
    record: TestRecord,
    responses: Vec<(ItemParameters, bool)>,
    current: AbilityEstimate,
    administered: HashSet<String>,
    status: SessionStatus,
    rng: StreamRng,
    stream: u64,
    pending: Option<Pending>,
    events: Vec<SessionEvent>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Starts a session whose selection stream is keyed by the empty respondent id.
pub fn start_session(bank: Arc<ItemBank>, config: CatConfig) -> Result<Session, CatError> {
    Session::start(bank, config, "")
}

impl Session {
    /// θ̂₀ = 0, empty record, selection stream derived from `(rng_seed, respondent_id)`.
    pub fn start(bank: Arc<ItemBank>, config: CatConfig, respondent_id: &str) -> Result<Self, CatError> {
        config.validate()?;
        let operational: Vec<usize> =
            bank.items().iter().enumerate().filter(|(_, item)| item.is_operational()).map(|(i, _)| i).collect();
        if operational.len() < config.min_items {
            return Err(CatError::UndersizedBank { operational: operational.len(), min_items: config.min_items });
        }
        let name = format!("cat/{respondent_id}");
        Ok(Self {
            grid: config.grid()?,
            rng: substream(config.rng_seed, &name),
            stream: stream_id(&name),
            bank,
            config,
            operational,
            record: TestRecord::new(),
            responses: Vec::new(),
            current: AbilityEstimate::prior(),
            administered: HashSet::new(),
            status: SessionStatus::Active,
            pending: None,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &CatConfig {
        &self.config
    }

    pub fn record(&self) -> &TestRecord {
        &self.record
    }

    pub fn current(&self) -> &AbilityEstimate {
        &self.current
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn administered(&self) -> &HashSet<String> {
        &self.administered
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn remaining(&self) -> usize {
        self.operational.len() - self.administered.len()
    }

    fn info_at(&self, pos: usize, theta: f64) -> f64 {
        fisher_info(&self.bank.items()[pos].params, theta, self.config.info_form)
    }

    /// Operational item with difficulty closest to θ̂₀ = 0; ties go to the larger
    /// discrimination, then the smaller identifier.
    pub fn select_first_item(&self) -> Result<String, CatError> {
        let items = self.bank.items();
        self.operational
            .iter()
            .map(|&i| &items[i])
            .filter(|item| !self.administered.contains(&item.item_id))
            .min_by(|x, y| {
                x.params.b.abs()
                    .total_cmp(&y.params.b.abs())
                    .then_with(|| y.params.a.total_cmp(&x.params.a))
                    .then_with(|| x.item_id.cmp(&y.item_id))
            })
            .map(|item| item.item_id.clone())
            .ok_or_else(|| CatError::Protocol("no operational items".into()))
    }

    /// The `top_k` most informative unadministered items at the current estimate,
    /// information descending, identifier ascending on ties.
    pub fn candidates(&self) -> Vec<(String, f64)> {
        let theta = self.current.theta;
        let items = self.bank.items();
        let mut pool: Vec<(usize, f64)> = self
            .operational
            .iter()
            .filter(|&&i| !self.administered.contains(&items[i].item_id))
            .map(|&i| (i, self.info_at(i, theta)))
            .collect();
        pool.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| items[x.0].item_id.cmp(&items[y.0].item_id)));
        pool.truncate(self.config.top_k);
        pool.into_iter().map(|(i, info)| (items[i].item_id.clone(), info)).collect()
    }

    /// Randomesque draw among [`Session::candidates`]; `None` (and status
    /// `bank_exhausted`) when nothing is left.
    pub fn select_next_item(&mut self) -> Option<String> {
        let candidates = self.candidates();
        if candidates.is_empty() {
            self.status = SessionStatus::BankExhausted;
            return None;
        }
        let draw = self.rng.gen_range(0..candidates.len());
        let (item_id, info) = candidates[draw].clone();
        self.pending = Some(Pending { item_id: item_id.clone(), info, rng_draw: Some(draw) });
        Some(item_id)
    }

    /// Item to administer next, or `None` once the session has ended.
    /// Calling again before answering returns the same item.
    pub fn next_item(&mut self) -> Result<Option<String>, CatError> {
        if self.status != SessionStatus::Active {
            return Ok(None);
        }
        if let Some(p) = &self.pending {
            return Ok(Some(p.item_id.clone()));
        }
        if self.record.is_empty() {
            let item_id = self.select_first_item()?;
            let pos = self.bank.position(&item_id).expect("selected from bank");
            let info = self.info_at(pos, self.current.theta);
            self.pending = Some(Pending { item_id: item_id.clone(), info, rng_draw: None });
            Ok(Some(item_id))
        } else {
            Ok(self.select_next_item())
        }
    }

    /// Records the response to the pending item, updates the EAP estimate and
    /// its information-based SE, then applies the stopping rule.
    pub fn submit_response(&mut self, item_id: &str, response: bool) -> Result<SessionStatus, CatError> {
        if self.status != SessionStatus::Active {
            return Err(CatError::Protocol(format!("session is {}", self.status.as_str())));
        }
        let pending = match &self.pending {
            Some(p) if p.item_id == item_id => self.pending.take().expect("checked"),
            _ if self.administered.contains(item_id) => {
                return Err(CatError::Protocol(format!("item `{item_id}` was already answered")))
            }
            _ => return Err(CatError::Protocol(format!("item `{item_id}` was not selected"))),
        };
        let params = *self.bank.params(item_id).ok_or_else(|| IrtError::UnknownItem(item_id.to_owned()))?;
        self.responses.push((params, response));
        let estimate = eap_of(&self.responses, &self.grid, self.config.info_form)?;
        self.record.push(item_id, response, estimate.theta, estimate.se)?;
        self.administered.insert(item_id.to_owned());
        self.events.push(SessionEvent {
            step: self.record.len(),
            item_id: item_id.to_owned(),
            response: u8::from(response),
            theta: estimate.theta,
            se: finite(estimate.se),
            info_of_item: pending.info,
            rng_draw: pending.rng_draw,
        });
        self.current = estimate;
        self.status = self.check_stopping();
        Ok(self.status)
    }

    pub fn check_stopping(&self) -> SessionStatus {
        stopping_rule(self.record.len(), self.current.se, self.remaining(), &self.config)
    }

    fn abort(&mut self) {
        self.pending = None;
        self.status = SessionStatus::Aborted;
    }
}

/// Terminal state of one session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub respondent_id: String,
    pub stream: u64,
    pub estimate: AbilityEstimate,
    pub record: TestRecord,
    pub status: SessionStatus,
    pub events: Vec<SessionEvent>,
    pub error: Option<String>,
}

impl SessionOutcome {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }

    pub fn terminal_line(&self) -> TerminalLine {
        TerminalLine {
            status: self.status,
            theta: self.estimate.theta,
            se: finite(self.estimate.se),
            n_items: self.record.len(),
        }
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.record.item_ids().map(str::to_owned).collect()
    }

    /// JSON Lines: one event per item, then the terminal line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.terminal_line()).expect("terminal line serializes"));
        out.push('\n');
        out
    }

    fn from_session(respondent_id: &str, session: Session, error: Option<String>) -> Self {
        Self {
            respondent_id: respondent_id.to_owned(),
            stream: session.stream,
            estimate: session.current,
            record: session.record,
            status: session.status,
            events: session.events,
            error,
        }
    }
}

/// Drives one session to completion against `responder`.
pub fn run_session(bank: Arc<ItemBank>, config: &CatConfig, responder: &mut dyn Responder) -> Result<SessionOutcome, CatError> {
    let id = responder.respondent_id().to_owned();
    let mut session = Session::start(bank, config.clone(), &id)?;
    while let Some(item_id) = session.next_item()? {
        match responder.respond(&item_id) {
            Ok(y) => {
                session.submit_response(&item_id, y)?;
            }
            Err(e) => {
                log::warn!("respondent `{id}` failed on item `{item_id}`: {e}");
                session.abort();
                return Ok(SessionOutcome::from_session(&id, session, Some(e.to_string())));
            }
        }
    }
    Ok(SessionOutcome::from_session(&id, session, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub respondent_id: String,
    pub stream: u64,
    pub status: SessionStatus,
    pub n_items: usize,
    pub theta: f64,
    pub se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to replay a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: CatConfig,
    pub rng_seed: u64,
    pub sessions: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub outcomes: Vec<SessionOutcome>,
    pub manifest: RunManifest,
}

impl BatchResult {
    pub fn completed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.completed()).count()
    }
}

/// Runs independent sessions (concurrently); results keep the input order.
/// A failing session is recorded and does not stop the batch.
pub fn batch_run(
    bank: Arc<ItemBank>,
    config: &CatConfig,
    responders: Vec<Box<dyn Responder>>,
) -> Result<BatchResult, CatError> {
    config.validate()?;
    let mut seen = HashSet::new();
    for r in &responders {
        if !seen.insert(r.respondent_id().to_owned()) {
            return Err(CatError::DuplicateRespondent(r.respondent_id().to_owned()));
        }
    }
    let outcomes: Vec<SessionOutcome> = responders
        .into_par_iter()
        .map(|mut responder| {
            let id = responder.respondent_id().to_owned();
            run_session(Arc::clone(&bank), config, responder.as_mut()).unwrap_or_else(|e| SessionOutcome {
                respondent_id: id.clone(),
                stream: stream_id(&format!("cat/{id}")),
                estimate: AbilityEstimate::prior(),
                record: TestRecord::new(),
                status: SessionStatus::Aborted,
                events: Vec::new(),
                error: Some(e.to_string()),
            })
        })
        .collect();
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config: config.clone(),
        rng_seed: config.rng_seed,
        sessions: outcomes
            .iter()
            .map(|o| ManifestEntry {
                respondent_id: o.respondent_id.clone(),
                stream: o.stream,
                status: o.status,
                n_items: o.record.len(),
                theta: o.estimate.theta,
                se: finite(o.estimate.se),
                error: o.error.clone(),
            })
            .collect(),
    };
    Ok(BatchResult { outcomes, manifest })
}

/// Reversible file-name encoding of a respondent identifier.
pub fn encode_file_stem(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub fn decode_file_stem(stem: &str) -> Option<String> {
    let bytes = stem.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = stem.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// Writes `<dir>/<respondent>.jsonl` for every outcome.
pub fn write_session_logs(outcomes: &[SessionOutcome], dir: &Path) -> Result<Vec<PathBuf>, CatError> {
    let io = |path: &Path, e: std::io::Error| CatError::Log { path: path.display().to_string(), message: e.to_string() };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut paths = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let path = dir.join(format!("{}.jsonl", encode_file_stem(&o.respondent_id)));
        let text = o.to_jsonl();
        parse_session_log(&text).map_err(|message| CatError::Log { path: path.display().to_string(), message })?;
        let mut f = fs::File::create(&path).map_err(|e| io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// A parsed session log.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub respondent_id: String,
    pub events: Vec<SessionEvent>,
    pub terminal: TerminalLine,
}

impl SessionLog {
    pub fn item_ids(&self) -> Vec<String> {
        self.events.iter().map(|e| e.item_id.clone()).collect()
    }
}

fn parse_session_log(text: &str) -> Result<(Vec<SessionEvent>, TerminalLine), String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let (last, body) = lines.split_last().ok_or("empty session log")?;
    let events = body
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_str::<SessionEvent>(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let terminal: TerminalLine =
        serde_json::from_str(last).map_err(|e| format!("terminal line {}: {e}", lines.len()))?;
    if terminal.n_items != events.len() {
        return Err(format!("terminal n_items {} but {} events", terminal.n_items, events.len()));
    }
    Ok((events, terminal))
}

pub fn read_session_log(path: &Path) -> Result<SessionLog, CatError> {
    let err = |message: String| CatError::Log { path: path.display().to_string(), message };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let (events, terminal) = parse_session_log(&text).map_err(err)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| err("bad file name".into()))?;
    let respondent_id = decode_file_stem(stem).ok_or_else(|| err("undecodable file name".into()))?;
    Ok(SessionLog { respondent_id, events, terminal })
}

/// All `*.jsonl` logs in `dir`, sorted by respondent id.
pub fn read_session_dir(dir: &Path) -> Result<Vec<SessionLog>, CatError> {
    let err = |message: String| CatError::Log { path: dir.display().to_string(), message };
    let mut logs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| err(e.to_string()))? {
        let path = entry.map_err(|e| err(e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            logs.push(read_session_log(&path)?);
        }
    }
    logs.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
    Ok(logs)
}
