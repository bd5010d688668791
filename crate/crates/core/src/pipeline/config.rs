use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::extract::{RemoteOcrConfig, DEFAULT_MIN_CONFIDENCE};
use crate::plan::RemoteLlmConfig;
use crate::reply::{SmtpConfig, DEFAULT_FROM};

pub const CONFIG_ENV: &str = "MAILFORM_CONFIG";
pub const LLM_TOKEN_ENV: &str = "MAILFORM_LLM_TOKEN";
pub const OCR_TOKEN_ENV: &str = "MAILFORM_OCR_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum OcrConfig {
    /// Sidecar text files under `<fixtures_dir>/ocr`.
    Stub,
    Remote(RemoteOcrConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum LlmConfig {
    /// Scripts under `<fixtures_dir>/llm`, falling back to the rule mapper.
    Mock {
        #[serde(default = "yes")]
        rule_mapper: bool,
    },
    Remote(RemoteLlmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum DeliveryConfig {
    Outbox,
    /// SMTP relay; `outbox_dir` keeps a copy of every submitted reply.
    Smtp(SmtpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_base")]
    pub base_s: f64,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: default_attempts(), base_s: default_base(), factor: default_factor() }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, after `n` failures.
    pub fn delay_s(&self, failures: u32) -> f64 {
        self.base_s * self.factor.powi(failures.saturating_sub(1) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub inbox_dir: PathBuf,
    pub outbox_dir: PathBuf,
    pub fixtures_dir: PathBuf,
    pub ledger_path: PathBuf,
    /// Defaults to `<ledger_path>.cursor.json`.
    #[serde(default)]
    pub cursor_path: Option<PathBuf>,
    #[serde(default = "default_from")]
    pub reply_from: String,
    #[serde(default = "default_ocr")]
    pub ocr: OcrConfig,
    #[serde(default = "default_llm")]
    pub llm: LlmConfig,
    #[serde(default = "default_delivery")]
    pub delivery: DeliveryConfig,
    #[serde(default = "default_min_confidence")]
    pub min_confidence: f64,
    #[serde(default = "default_poll")]
    pub poll_interval_s: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn yes() -> bool {
    true
}
fn default_attempts() -> u32 {
    3
}
fn default_base() -> f64 {
    1.0
}
fn default_factor() -> f64 {
    2.0
}
fn default_from() -> String {
    DEFAULT_FROM.into()
}
fn default_ocr() -> OcrConfig {
    OcrConfig::Stub
}
fn default_llm() -> LlmConfig {
    LlmConfig::Mock { rule_mapper: true }
}
fn default_delivery() -> DeliveryConfig {
    DeliveryConfig::Outbox
}
fn default_min_confidence() -> f64 {
    DEFAULT_MIN_CONFIDENCE
}
fn default_poll() -> f64 {
    5.0
}

impl Config {
    /// Hermetic configuration rooted at `root`: stub OCR, mock LLM, outbox
    /// delivery.
    pub fn hermetic(root: &Path, fixtures_dir: &Path) -> Self {
        Self {
            inbox_dir: root.join("inbox"),
            outbox_dir: root.join("outbox"),
            fixtures_dir: fixtures_dir.to_path_buf(),
            ledger_path: root.join("ledger.jsonl"),
            cursor_path: None,
            reply_from: default_from(),
            ocr: default_ocr(),
            llm: default_llm(),
            delivery: default_delivery(),
            min_confidence: default_min_confidence(),
            poll_interval_s: default_poll(),
            retry: RetryPolicy::default(),
        }
    }

    /// Parse a JSON config. Relative paths are taken relative to `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: Config = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        for p in [&mut config.inbox_dir, &mut config.outbox_dir, &mut config.fixtures_dir, &mut config.ledger_path] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(p) = config.cursor_path.as_mut().filter(|p| p.is_relative()) {
            *p = base_dir.join(&*p);
        }
        config.validate()?;
        Ok(config)
    }

    /// Load from `path`, then pick up backend tokens from the environment.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::from_json(&text, base)?;
        config.apply_env();
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let OcrConfig::Remote(c) = &mut self.ocr {
            c.token = env::var(OCR_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        if let LlmConfig::Remote(c) = &mut self.llm {
            c.token = env::var(LLM_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return bad("min_confidence must be within [0, 1]");
        }
        if !(self.poll_interval_s.is_finite() && self.poll_interval_s > 0.0) {
            return bad("poll_interval_s must be positive");
        }
        if self.retry.attempts == 0 {
            return bad("retry.attempts must be at least 1");
        }
        if !(self.retry.base_s >= 0.0 && self.retry.factor >= 1.0) {
            return bad("retry.base_s must be >= 0 and retry.factor >= 1");
        }
        Ok(())
    }

    pub fn cursor_path(&self) -> PathBuf {
        self.cursor_path.clone().unwrap_or_else(|| {
            let mut name = self.ledger_path.file_name().unwrap_or_default().to_os_string();
            name.push(".cursor.json");
            self.ledger_path.with_file_name(name)
        })
    }

    pub fn ocr_fixtures(&self) -> PathBuf {
        self.fixtures_dir.join("ocr")
    }

    pub fn llm_fixtures(&self) -> PathBuf {
        self.fixtures_dir.join("llm")
    }
}
