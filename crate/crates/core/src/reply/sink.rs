use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use lettre::address::Envelope;
use lettre::message::Mailbox;
use lettre::{SmtpTransport, Transport};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::OutboundReply;
use crate::util::sha256_hex;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DeliveryError {
    #[error("outbox write failed: {0}")]
    Io(String),
    #[error("SMTP submission failed: {0}")]
    Smtp(String),
    #[error("invalid envelope: {0}")]
    Envelope(String),
}

impl DeliveryError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, DeliveryError::Envelope(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    /// Outbox path or SMTP relay the message went to.
    pub location: String,
    pub sha256: String,
    /// The reply had already been delivered; nothing was sent this time.
    pub duplicate: bool,
}

/// Accepts serialized replies for delivery.
pub trait DeliverySink: Send + Sync {
    fn send(&self, reply: &OutboundReply) -> Result<DeliveryReceipt, DeliveryError>;
}

/// Outbox file name for a request id: the id with characters outside
/// `[A-Za-z0-9._@+-]` replaced by `_`, plus a short digest whenever anything
/// was replaced so distinct ids never share a file.
pub fn outbox_file_name(message_id: &str) -> String {
    let safe: String = message_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._@+-".contains(c) { c } else { '_' })
        .collect();
    let safe = safe.trim_start_matches('.');
    if safe == message_id && !safe.is_empty() {
        format!("{safe}.eml")
    } else {
        format!("{safe}-{}.eml", &sha256_hex(message_id.as_bytes())[..8])
    }
}

/// Writes each reply to `<outbox>/<request id>.eml`. A second send for the
/// same request is reported as a duplicate and leaves the first file alone.
#[derive(Debug, Clone)]
pub struct OutboxSink {
    dir: PathBuf,
}

impl OutboxSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, message_id: &str) -> PathBuf {
        self.dir.join(outbox_file_name(message_id))
    }

    /// Write without clobbering: temp file, then hard-link into place, which
    /// fails if the target exists.
    fn write_new(&self, path: &Path, bytes: &[u8]) -> Result<bool, DeliveryError> {
        let io_err = |e: io::Error| DeliveryError::Io(format!("{}: {e}", path.display()));
        if path.exists() {
            return Ok(false);
        }
        fs::create_dir_all(&self.dir).map_err(io_err)?;
        let tmp = self.dir.join(format!(
            ".{}.tmp-{}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            std::process::id()
        ));
        fs::write(&tmp, bytes).and_then(|_| fs::File::open(&tmp)?.sync_all()).map_err(io_err)?;
        let linked = fs::hard_link(&tmp, path);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(io_err(e)),
        }
    }

    fn remove(&self, message_id: &str) {
        let _ = fs::remove_file(self.path_for(message_id));
    }
}

impl DeliverySink for OutboxSink {
    fn send(&self, reply: &OutboundReply) -> Result<DeliveryReceipt, DeliveryError> {
        let path = self.path_for(&reply.in_reply_to);
        let written = self.write_new(&path, &reply.bytes)?;
        Ok(DeliveryReceipt { location: path.display().to_string(), sha256: sha256_hex(&reply.bytes), duplicate: !written })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmtpConfig {
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_port() -> u16 {
    25
}

fn default_timeout() -> f64 {
    30.0
}

/// Submits replies to an SMTP relay (plain connection, no authentication;
/// meant for a local MTA). Each reply is first archived in an outbox
/// directory, which doubles as the duplicate guard: a reply already archived
/// is never submitted again.
pub struct SmtpSink {
    config: SmtpConfig,
    archive: OutboxSink,
}

impl SmtpSink {
    pub fn new(config: SmtpConfig, archive_dir: impl Into<PathBuf>) -> Self {
        Self { config, archive: OutboxSink::new(archive_dir) }
    }
}

fn envelope(reply: &OutboundReply) -> Result<Envelope, DeliveryError> {
    let parse = |s: &str| s.parse::<Mailbox>().map(|m| m.email).map_err(|e| DeliveryError::Envelope(format!("{s:?}: {e}")));
    Envelope::new(Some(parse(&reply.from)?), vec![parse(&reply.to)?]).map_err(|e| DeliveryError::Envelope(e.to_string()))
}

impl DeliverySink for SmtpSink {
    fn send(&self, reply: &OutboundReply) -> Result<DeliveryReceipt, DeliveryError> {
        let envelope = envelope(reply)?;
        let archived = self.archive.send(reply)?;
        let location = format!("smtp://{}:{}", self.config.host, self.config.port);
        if archived.duplicate {
            return Ok(DeliveryReceipt { location, ..archived });
        }
        let transport = SmtpTransport::builder_dangerous(&self.config.host)
            .port(self.config.port)
            .timeout(Some(Duration::from_secs_f64(self.config.timeout_s)))
            .build();
        if let Err(e) = transport.send_raw(&envelope, &reply.bytes) {
            // not submitted: drop the archive copy so a retry can send it
            self.archive.remove(&reply.in_reply_to);
            return Err(DeliveryError::Smtp(e.to_string()));
        }
        Ok(DeliveryReceipt { location, ..archived })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(id: &str) -> OutboundReply {
        OutboundReply {
            in_reply_to: id.into(),
            from: "forms@mailform.invalid".into(),
            to: "ana@example.org".into(),
            subject: "Re: x".into(),
            body_text: "b".into(),
            attachment: None,
            bytes: b"Subject: Re: x\r\n\r\nb\r\n".to_vec(),
        }
    }

    #[test]
    fn file_names() {
        assert_eq!(outbox_file_name("abc@example.org"), "abc@example.org.eml");
        let odd = outbox_file_name("a/b c@x");
        assert!(odd.starts_with("a_b_c@x-") && odd.ends_with(".eml"));
        assert_ne!(outbox_file_name("a/b"), outbox_file_name("a_b"));
        assert!(!outbox_file_name("../x").contains('/'));
    }

    #[test]
    fn outbox_writes_once() {
        let dir = tempfile::tempdir().unwrap();
        let sink = OutboxSink::new(dir.path().join("out"));
        let r = reply("m1@x");
        let first = sink.send(&r).unwrap();
        assert!(!first.duplicate);
        assert_eq!(fs::read(&first.location).unwrap(), r.bytes);
        let mut changed = r.clone();
        changed.bytes = b"other".to_vec();
        let second = sink.send(&changed).unwrap();
        assert!(second.duplicate);
        assert_eq!(fs::read(&first.location).unwrap(), r.bytes);
        assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_outbox_is_retryable() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = OutboxSink::new(blocker.join("out")).send(&reply("m@x")).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn smtp_failure_leaves_no_archive() {
        let dir = tempfile::tempdir().unwrap();
        let config = SmtpConfig { host: "127.0.0.1".into(), port: 1, timeout_s: 2.0 };
        let sink = SmtpSink::new(config, dir.path());
        let err = sink.send(&reply("m@x")).unwrap_err();
        assert!(matches!(err, DeliveryError::Smtp(_)));
        assert!(err.is_retryable());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
