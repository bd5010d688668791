use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::plan::CompletionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum State {
    Received,
    Extracted,
    Planned,
    Filled,
    Replied,
    Failed,
}

impl State {
    pub const CHAIN: [State; 5] = [State::Received, State::Extracted, State::Planned, State::Filled, State::Replied];

    pub fn is_terminal(self) -> bool {
        matches!(self, State::Replied | State::Failed)
    }

    pub fn can_move_to(self, to: State) -> bool {
        match (self, to) {
            (from, State::Failed) => !from.is_terminal(),
            (from, to) => {
                let pos = |s| Self::CHAIN.iter().position(|c| *c == s);
                matches!((pos(from), pos(to)), (Some(a), Some(b)) if b == a + 1)
            }
        }
    }
}

/// True when `path` is a prefix of the legal chain, optionally ending in
/// `Failed`.
pub fn is_legal_path(path: &[State]) -> bool {
    match path.first() {
        Some(State::Received) => path.windows(2).all(|w| w[0].can_move_to(w[1])),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    /// Went through the pipeline in this run.
    Processed,
    /// Message id already handled; nothing was done.
    Skipped,
    /// Rebuilt at startup from a reply found in the outbox without a ledger
    /// entry (crash between sending and recording).
    Reconciled,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    pub filled_pdf_sha256: Option<String>,
    pub reply_sha256: Option<String>,
    pub reply_location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessingRecord {
    pub message_id: String,
    pub disposition: Disposition,
    pub state: State,
    /// Every state the request passed through, starting with `Received`.
    pub transitions: Vec<State>,
    /// Seconds per stage: `ocr_elapsed`, `llm_elapsed`, `fill_elapsed`,
    /// `reply_elapsed`, `total_elapsed`.
    pub timings: BTreeMap<String, f64>,
    pub attempt_counts: BTreeMap<String, u32>,
    pub failure_reason: Option<String>,
    pub outputs: Outputs,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub plan: Option<CompletionPlan>,
    pub recorded_at: DateTime<Utc>,
}

impl ProcessingRecord {
    pub fn new(message_id: &str) -> Self {
        Self {
            message_id: message_id.to_string(),
            disposition: Disposition::Processed,
            state: State::Received,
            transitions: vec![State::Received],
            timings: BTreeMap::new(),
            attempt_counts: BTreeMap::new(),
            failure_reason: None,
            outputs: Outputs::default(),
            warnings: Vec::new(),
            plan: None,
            recorded_at: Utc::now(),
        }
    }

    pub fn skipped(message_id: &str) -> Self {
        Self { disposition: Disposition::Skipped, ..Self::new(message_id) }
    }

    pub fn advance(&mut self, to: State) -> Result<(), PipelineError> {
        if !self.state.can_move_to(to) {
            return Err(PipelineError::IllegalTransition { from: self.state, to });
        }
        self.state = to;
        self.transitions.push(to);
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>) -> Result<(), PipelineError> {
        self.advance(State::Failed)?;
        self.failure_reason = Some(reason.into());
        Ok(())
    }
}

/// Append-only JSON Lines ledger plus the set of message ids it has closed.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    processed: BTreeMap<String, State>,
    lines: u64,
}

fn ledger_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Ledger { path: path.display().to_string(), reason: e.to_string() }
}

/// All parseable records in `path`, in order, plus a warning per line that
/// could not be parsed (a torn final write after a crash).
pub fn replay(path: &Path) -> Result<(Vec<ProcessingRecord>, Vec<String>), PipelineError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), Vec::new())),
        Err(e) => return Err(ledger_err(path, e)),
    };
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => records.push(r),
            Err(e) => warnings.push(format!("{}:{}: unreadable ledger line skipped: {e}", path.display(), i + 1)),
        }
    }
    Ok((records, warnings))
}

impl Ledger {
    pub fn open(path: &Path) -> Result<(Self, Vec<String>), PipelineError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| ledger_err(path, e))?;
        }
        let (records, warnings) = replay(path)?;
        // terminate a torn last line so the next record starts cleanly
        if let Ok(bytes) = fs::read(path) {
            if bytes.last().is_some_and(|b| *b != b'\n') {
                OpenOptions::new().append(true).open(path).and_then(|mut f| f.write_all(b"\n")).map_err(|e| ledger_err(path, e))?;
            }
        }
        let mut ledger = Self { path: path.to_path_buf(), processed: BTreeMap::new(), lines: 0 };
        for r in &records {
            ledger.note(r);
        }
        ledger.lines = records.len() as u64;
        Ok((ledger, warnings))
    }

    fn note(&mut self, record: &ProcessingRecord) {
        if record.disposition != Disposition::Skipped {
            self.processed.insert(record.message_id.clone(), record.state);
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record as a single line; returns its 0-based position
    /// among the parseable records.
    pub fn append(&mut self, record: &ProcessingRecord) -> Result<u64, PipelineError> {
        let mut line = serde_json::to_vec(record).map_err(|e| ledger_err(&self.path, e))?;
        line.push(b'\n');
        let mut file =
            OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| ledger_err(&self.path, e))?;
        file.write_all(&line).and_then(|_| file.sync_data()).map_err(|e| ledger_err(&self.path, e))?;
        self.note(record);
        self.lines += 1;
        Ok(self.lines - 1)
    }

    pub fn is_processed(&self, message_id: &str) -> bool {
        self.processed.contains_key(message_id)
    }

    pub fn processed_ids(&self) -> BTreeSet<String> {
        self.processed.keys().cloned().collect()
    }

    pub fn final_state(&self, message_id: &str) -> Option<State> {
        self.processed.get(message_id).copied()
    }
}
