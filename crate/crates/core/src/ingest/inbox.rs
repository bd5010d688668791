use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{parse_inbound, IngestError};
use crate::util::{sha256_hex, write_atomic};

/// A mailbox the pipeline can poll. Remote mailboxes implement the same
/// contract: enumerate message keys, fetch bytes; the cursor records what has
/// been seen.
pub trait MailboxSource {
    /// All message keys currently in the mailbox, in delivery order.
    fn enumerate(&self) -> Result<Vec<String>, IngestError>;
    fn fetch(&self, key: &str) -> io::Result<Vec<u8>>;
}

/// Directory of `.eml` files, ordered by file name.
#[derive(Debug, Clone)]
pub struct Maildir {
    dir: PathBuf,
}

impl Maildir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }
}

impl MailboxSource for Maildir {
    fn enumerate(&self) -> Result<Vec<String>, IngestError> {
        let entries =
            fs::read_dir(&self.dir).map_err(|e| IngestError::Unreachable(format!("{}: {e}", self.dir.display())))?;
        let mut keys = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| IngestError::Unreachable(e.to_string()))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".eml") && !name.starts_with('.') {
                keys.push(name);
            }
        }
        keys.sort();
        Ok(keys)
    }

    fn fetch(&self, key: &str) -> io::Result<Vec<u8>> {
        fs::read(self.dir.join(key))
    }
}

/// Ingestion cursor: message key → content digest for every message already
/// handed out. Persisted as a JSON object, replaced atomically on save.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cursor {
    pub seen: BTreeMap<String, String>,
}

impl Cursor {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        match fs::read(path) {
            Ok(bytes) => {
                let seen = serde_json::from_slice(&bytes).map_err(|e| IngestError::Cursor {
                    path: path.display().to_string(),
                    source: io::Error::new(io::ErrorKind::InvalidData, e),
                })?;
                Ok(Self { seen })
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(IngestError::Cursor { path: path.display().to_string(), source }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let json = serde_json::to_vec_pretty(&self.seen).expect("string map serializes");
        write_atomic(path, &json).map_err(|source| IngestError::Cursor { path: path.display().to_string(), source })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.seen.contains_key(key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    pub key: String,
    pub bytes: Vec<u8>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollOutcome {
    pub messages: Vec<RawMessage>,
    pub cursor: Cursor,
    pub warnings: Vec<String>,
}

/// Messages not yet recorded in `cursor`, plus the advanced cursor.
///
/// Unreadable or unparseable messages are skipped with a warning and marked
/// seen so they are not reported on every poll. The caller persists the
/// returned cursor once the batch has been handled.
pub fn poll_inbox(source: &dyn MailboxSource, cursor: &Cursor) -> Result<PollOutcome, IngestError> {
    let mut next = cursor.clone();
    let mut messages = Vec::new();
    let mut warnings = Vec::new();
    for key in source.enumerate()? {
        if cursor.contains(&key) {
            continue;
        }
        let bytes = match source.fetch(&key) {
            Ok(b) => b,
            Err(e) => {
                let msg = format!("skipping unreadable message {key}: {e}");
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
        };
        let digest = sha256_hex(&bytes);
        next.seen.insert(key.clone(), digest.clone());
        if let Err(e) = parse_inbound(&bytes) {
            let msg = format!("skipping malformed message {key}: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        messages.push(RawMessage { key, bytes, digest });
    }
    Ok(PollOutcome { messages, cursor: next, warnings })
}
