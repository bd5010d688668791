use std::fmt;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{text_rows, ExtractError, TextBlock};
use crate::util::sha256_hex;

/// A document-text detection service.
pub trait OcrBackend: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, bytes: &[u8], media_type: &str) -> Result<Vec<TextBlock>, ExtractError>;
}

/// Sidecar-file backend for hermetic runs: the text of an attachment lives in
/// `<fixtures_dir>/<sha256-hex>.txt`, one block per non-empty line. Missing
/// sidecars yield no blocks.
#[derive(Debug, Clone)]
pub struct StubOcr {
    fixtures_dir: PathBuf,
}

impl StubOcr {
    pub fn new(fixtures_dir: impl Into<PathBuf>) -> Self {
        Self { fixtures_dir: fixtures_dir.into() }
    }

    pub fn sidecar_path(&self, bytes: &[u8]) -> PathBuf {
        self.fixtures_dir.join(format!("{}.txt", sha256_hex(bytes)))
    }
}

impl OcrBackend for StubOcr {
    fn name(&self) -> &str {
        "stub"
    }

    fn detect(&self, bytes: &[u8], _media_type: &str) -> Result<Vec<TextBlock>, ExtractError> {
        let path = self.sidecar_path(bytes);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                log::warn!("no OCR sidecar at {}", path.display());
                return Ok(Vec::new());
            }
            Err(e) => return Err(ExtractError::Unreachable(format!("{}: {e}", path.display()))),
        };
        let lines = text.lines().map(str::trim_end).filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
        Ok(text_rows(lines))
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteOcrConfig {
    pub base_url: String,
    #[serde(skip)]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    60.0
}

impl fmt::Debug for RemoteOcrConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteOcrConfig")
            .field("base_url", &self.base_url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("timeout_s", &self.timeout_s)
            .finish()
    }
}

#[derive(Deserialize)]
struct DetectResponse {
    blocks: Vec<TextBlock>,
}

/// HTTP detect-document-text client: `POST <base_url>/extract` with the raw
/// attachment bytes, answered by `{"blocks": [...]}`.
pub struct RemoteOcr {
    config: RemoteOcrConfig,
    http: reqwest::blocking::Client,
}

impl RemoteOcr {
    pub fn new(config: RemoteOcrConfig) -> Result<Self, ExtractError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| ExtractError::Unreachable(e.to_string()))?;
        Ok(Self { config, http })
    }
}

impl OcrBackend for RemoteOcr {
    fn name(&self) -> &str {
        "remote"
    }

    fn detect(&self, bytes: &[u8], media_type: &str) -> Result<Vec<TextBlock>, ExtractError> {
        let url = format!("{}/extract", self.config.base_url.trim_end_matches('/'));
        let mut req = self
            .http
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, media_type)
            .body(bytes.to_vec());
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ExtractError::Unreachable(e.without_url().to_string()))?;
        let status = resp.status();
        let raw = resp.text().map_err(|e| ExtractError::Unreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(ExtractError::Unreachable(format!("HTTP {}: {raw}", status.as_u16())));
        }
        serde_json::from_str::<DetectResponse>(&raw)
            .map(|r| r.blocks)
            .map_err(|e| ExtractError::Malformed { reason: e.to_string(), raw })
    }
}
