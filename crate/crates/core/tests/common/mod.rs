#![allow(dead_code)]

pub mod props;
pub mod scenarios;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use mailform::eval::GoldKey;
use mailform::extract::StubOcr;
use mailform::form::FormSchema;
use mailform::pipeline::{Config, Pipeline};
use mailform::plan::{LlmBackend, MockLlm};
use mailform::reply::{DeliveryError, DeliveryReceipt, DeliverySink, OutboundReply, OutboxSink};
use tempfile::TempDir;

pub const GOLDEN_ID: &str = "golden-001@example.es";
pub const NO_FORM_ID: &str = "noform-001@example.es";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn golden_eml() -> Vec<u8> {
    fs::read(fixtures().join("golden/request.eml")).unwrap()
}

pub fn no_form_eml() -> Vec<u8> {
    fs::read(fixtures().join("no_form/request.eml")).unwrap()
}

/// Same message under a different Message-ID.
pub fn with_message_id(eml: &[u8], id: &str) -> Vec<u8> {
    let text = String::from_utf8(eml.to_vec()).unwrap();
    let start = text.find("Message-ID: <").unwrap();
    let end = start + text[start..].find('>').unwrap() + 1;
    format!("{}Message-ID: <{id}>{}", &text[..start], &text[end..]).into_bytes()
}

/// Plan the golden script encodes: field name → value, `None` for blanks.
pub fn golden_plan() -> BTreeMap<String, Option<String>> {
    serde_json::from_str(&fs::read_to_string(fixtures().join("golden/expected_plan.json")).unwrap()).unwrap()
}

pub struct Env {
    pub dir: TempDir,
    pub config: Config,
}

/// Hermetic config in a fresh temp dir: stub OCR and scripted mock LLM from
/// the golden fixtures, outbox delivery, no retry delays.
pub fn hermetic_env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::hermetic(dir.path(), &fixtures().join("golden"));
    config.retry.base_s = 0.0;
    fs::create_dir_all(&config.inbox_dir).unwrap();
    Env { dir, config }
}

pub fn write_config(env: &Env) -> PathBuf {
    let path = env.dir.path().join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&env.config).unwrap()).unwrap();
    path
}

pub fn outbox_files(config: &Config) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = match fs::read_dir(&config.outbox_dir) {
        Ok(entries) => entries
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "eml"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    files
}

/// Outbox sink that counts deliveries which actually wrote a new reply.
#[derive(Clone)]
pub struct CountingSink {
    inner: OutboxSink,
    pub written: Arc<AtomicUsize>,
}

impl CountingSink {
    pub fn new(dir: &Path, written: Arc<AtomicUsize>) -> Self {
        Self { inner: OutboxSink::new(dir), written }
    }
}

impl DeliverySink for CountingSink {
    fn send(&self, reply: &OutboundReply) -> Result<DeliveryReceipt, DeliveryError> {
        let receipt = self.inner.send(reply)?;
        if !receipt.duplicate {
            self.written.fetch_add(1, Ordering::SeqCst);
        }
        Ok(receipt)
    }
}

pub fn golden_llm(config: &Config) -> MockLlm {
    MockLlm::from_script_dir(&config.llm_fixtures(), false).unwrap()
}

pub fn pipeline_with(config: &Config, llm: Box<dyn LlmBackend>, written: Arc<AtomicUsize>) -> Pipeline {
    Pipeline::with_backends(
        config.clone(),
        Box::new(StubOcr::new(config.ocr_fixtures())),
        llm,
        Box::new(CountingSink::new(&config.outbox_dir, written)),
    )
    .unwrap()
}

/// Labelled observed plans.
pub type Runs = Vec<(String, BTreeMap<String, String>)>;

pub fn table1() -> (FormSchema, GoldKey, Runs) {
    let dir = fixtures().join("table1");
    let schema = mailform::form::read_schema(&fs::read(dir.join("form.pdf")).unwrap()).unwrap();
    let gold = GoldKey::from_json(&fs::read_to_string(dir.join("gold.json")).unwrap()).unwrap();
    let mut runs = Vec::new();
    for entry in fs::read_dir(dir.join("runs")).unwrap() {
        let path = entry.unwrap().path();
        let label = path.file_stem().unwrap().to_string_lossy().into_owned();
        let observed = mailform::eval::observed_from_json(&fs::read_to_string(&path).unwrap()).unwrap();
        runs.push((label, observed));
    }
    (schema, gold, runs)
}

/// Reference scoring table: label, correct, incorrect, blank.
pub const TABLE1: [(&str, usize, usize, usize); 8] = [
    ("Optimal result", 17, 0, 12),
    ("llama-4-maverick-17b-128e-instruct", 16, 2, 11),
    ("llama-4-scout-17b-16e-instruct", 14, 3, 12),
    ("gemini-2.5-pro", 13, 4, 12),
    ("chatgpt-4.1", 12, 5, 12),
    ("deepseek-r1", 12, 5, 12),
    ("llama-3.3-70b-instruct", 10, 8, 11),
    ("qwen-qwq-32b", 10, 10, 9),
];
