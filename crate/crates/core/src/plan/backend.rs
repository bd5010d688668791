//! Chat-completion backends: a scripted/rule-based mock and an HTTP client for
//! OpenAI-style `/v1/chat/completions` endpoints.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{prompt_field_names, section, PromptBundle, SECTION_CONTEXT};
use crate::util::normalize_value;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no scripted response for schema {0}")]
    NoScript(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError>;
}

#[derive(Debug, Clone)]
pub enum MockReply {
    Text(String),
    Fail(LlmError),
}

/// Deterministic stand-in for a model.
///
/// Replies are scripted per schema digest and consumed in order; the last
/// scripted reply repeats once the queue is down to one. Schemas without a
/// script fall back to the rule mapper when enabled: context lines shaped like
/// `KEY: value` are copied into the field whose name matches `KEY`
/// (case-insensitive), every other field is answered with `null`.
pub struct MockLlm {
    model: String,
    scripts: Mutex<HashMap<String, VecDeque<MockReply>>>,
    rule_mapper: bool,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new() -> Self {
        Self { model: "mock".into(), scripts: Mutex::new(HashMap::new()), rule_mapper: false, calls: AtomicUsize::new(0) }
    }

    pub fn with_rule_mapper(mut self) -> Self {
        self.rule_mapper = true;
        self
    }

    pub fn script(self, schema_digest: impl Into<String>, replies: impl IntoIterator<Item = MockReply>) -> Self {
        self.scripts.lock().unwrap().entry(schema_digest.into()).or_default().extend(replies);
        self
    }

    pub fn script_text(self, schema_digest: impl Into<String>, text: impl Into<String>) -> Self {
        self.script(schema_digest, [MockReply::Text(text.into())])
    }

    /// Load `<schema_digest>.txt` reply files from `dir`.
    pub fn from_script_dir(dir: &Path, rule_mapper: bool) -> io::Result<Self> {
        let mut mock = Self::new();
        mock.rule_mapper = rule_mapper;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    let text = fs::read_to_string(&path)?;
                    mock = mock.script_text(stem, text);
                }
            }
        }
        Ok(mock)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn map_rules(bundle: &PromptBundle) -> String {
        let context = section(&bundle.user_text, SECTION_CONTEXT);
        let mut facts: HashMap<String, String> = HashMap::new();
        for line in context.lines() {
            if let Some((key, value)) = line.split_once(':') {
                let value = value.trim();
                if !value.is_empty() {
                    facts.entry(normalize_value(key)).or_insert_with(|| value.to_string());
                }
            }
        }
        let mut out = serde_json::Map::new();
        for name in prompt_field_names(&bundle.user_text) {
            let value = facts.get(&normalize_value(&name)).map_or(Value::Null, |v| Value::String(v.clone()));
            out.insert(name, value);
        }
        Value::Object(out).to_string()
    }
}

impl Default for MockLlm {
    fn default() -> Self {
        Self::new()
    }
}

impl LlmBackend for MockLlm {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let scripted = {
            let mut scripts = self.scripts.lock().unwrap();
            scripts.get_mut(&bundle.schema_digest).and_then(|queue| {
                if queue.len() > 1 {
                    queue.pop_front()
                } else {
                    queue.front().cloned()
                }
            })
        };
        match scripted {
            Some(MockReply::Text(t)) => Ok(t),
            Some(MockReply::Fail(e)) => Err(e),
            None if self.rule_mapper => Ok(Self::map_rules(bundle)),
            None => Err(LlmError::NoScript(bundle.schema_digest.clone())),
        }
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(skip)]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    120.0
}

impl fmt::Debug for RemoteLlmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteLlmConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("timeout_s", &self.timeout_s)
            .finish()
    }
}

/// Client for an OpenAI-compatible chat-completion endpoint.
pub struct RemoteLlm {
    config: RemoteLlmConfig,
    http: reqwest::blocking::Client,
}

impl RemoteLlm {
    pub fn new(config: RemoteLlmConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl LlmBackend for RemoteLlm {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": self.config.temperature,
        });
        let mut req = self.http.post(self.endpoint()).json(&body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Status { status: status.as_u16(), body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(format!("{e}: {text}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Malformed(format!("missing choices[0].message.content: {text}")))
    }
}
