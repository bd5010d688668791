//! Request orchestration: classify → extract → plan → fill → reply, one
//! request at a time, with retries and an append-only ledger for idempotency.

mod config;
mod ledger;

pub use config::{
    Config, DeliveryConfig, LlmConfig, OcrConfig, RetryPolicy, CONFIG_ENV, LLM_TOKEN_ENV, OCR_TOKEN_ENV,
};
pub use ledger::{is_legal_path, replay, Disposition, Ledger, Outputs, ProcessingRecord, State};

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::extract::{self, ExtractedDocument, OcrBackend, RemoteOcr, StubOcr};
use crate::form::{self, FormSchema};
use crate::ingest::{self, Cursor, InboundRequest, MailboxSource, Maildir};
use crate::plan::{self, CompletionPlan, LlmBackend, MockLlm, RemoteLlm};
use crate::reply::{self, DeliverySink, OutboundReply, OutboxSink, SmtpSink};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    /// The ledger cannot be read or appended; processing must stop.
    #[error("ledger {path} unusable: {reason}")]
    Ledger { path: String, reason: String },
    #[error("illegal state transition {from:?} -> {to:?}")]
    IllegalTransition { from: State, to: State },
    #[error("cannot parse message: {0}")]
    Ingest(#[from] ingest::IngestError),
    /// Simulated process crash right after reaching a state (tests only).
    #[error("injected crash after {0:?}")]
    InjectedCrash(State),
}

impl PipelineError {
    pub fn is_fatal(&self) -> bool {
        matches!(self, PipelineError::Ledger { .. } | PipelineError::InjectedCrash(_))
    }
}

/// A stage that ended the request. `user_message` goes into the rejection
/// reply; `None` means no reply can be sent.
struct StageFailure {
    reason: String,
    user_message: Option<String>,
}

impl StageFailure {
    fn new(reason: impl Into<String>, user_message: impl Into<String>) -> Self {
        Self { reason: reason.into(), user_message: Some(user_message.into()) }
    }
}

fn with_retry<T, E: Display>(
    policy: &RetryPolicy,
    stage: &str,
    attempts: &mut BTreeMap<String, u32>,
    retryable: impl Fn(&E) -> bool,
    mut op: impl FnMut() -> Result<T, E>,
) -> Result<T, E> {
    let mut failures = 0;
    loop {
        *attempts.entry(stage.to_string()).or_insert(0) += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if retryable(&e) && failures + 1 < policy.attempts => {
                failures += 1;
                let delay = policy.delay_s(failures);
                log::warn!("{stage}: attempt {failures} failed ({e}); retrying in {delay:.1}s");
                if delay > 0.0 {
                    thread::sleep(Duration::from_secs_f64(delay));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickSummary {
    pub polled: usize,
    pub replied: usize,
    pub failed: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

pub struct Pipeline {
    config: Config,
    ocr: Box<dyn OcrBackend>,
    llm: Box<dyn LlmBackend>,
    sink: Box<dyn DeliverySink>,
    ledger: Ledger,
    /// Fault injection: stop as if the process died right after reaching
    /// this state, before anything else is recorded.
    pub crash_after: Option<State>,
}

impl Pipeline {
    /// Backends as configured.
    pub fn new(config: Config) -> Result<Self, PipelineError> {
        let ocr: Box<dyn OcrBackend> = match &config.ocr {
            OcrConfig::Stub => Box::new(StubOcr::new(config.ocr_fixtures())),
            OcrConfig::Remote(c) => {
                Box::new(RemoteOcr::new(c.clone()).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
        };
        let llm: Box<dyn LlmBackend> = match &config.llm {
            LlmConfig::Mock { rule_mapper } => {
                let dir = config.llm_fixtures();
                if dir.is_dir() {
                    Box::new(MockLlm::from_script_dir(&dir, *rule_mapper).map_err(|e| {
                        PipelineError::Config(format!("cannot load LLM scripts from {}: {e}", dir.display()))
                    })?)
                } else if *rule_mapper {
                    Box::new(MockLlm::new().with_rule_mapper())
                } else {
                    Box::new(MockLlm::new())
                }
            }
            LlmConfig::Remote(c) => {
                Box::new(RemoteLlm::new(c.clone()).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
        };
        let sink: Box<dyn DeliverySink> = match &config.delivery {
            DeliveryConfig::Outbox => Box::new(OutboxSink::new(&config.outbox_dir)),
            DeliveryConfig::Smtp(c) => Box::new(SmtpSink::new(c.clone(), &config.outbox_dir)),
        };
        Self::with_backends(config, ocr, llm, sink)
    }

    /// Open the ledger and reconcile replies that were sent but never
    /// recorded.
    pub fn with_backends(
        config: Config,
        ocr: Box<dyn OcrBackend>,
        llm: Box<dyn LlmBackend>,
        sink: Box<dyn DeliverySink>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let (ledger, warnings) = Ledger::open(&config.ledger_path)?;
        for w in warnings {
            log::warn!("{w}");
        }
        let mut pipeline = Self { config, ocr, llm, sink, ledger, crash_after: None };
        let n = pipeline.reconcile_outbox()?;
        if n > 0 {
            log::warn!("reconciled {n} sent replies missing from the ledger");
        }
        Ok(pipeline)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Append a `Reconciled` record for every outbox reply whose request has
    /// no ledger entry. Returns how many were added.
    pub fn reconcile_outbox(&mut self) -> Result<usize, PipelineError> {
        let Ok(entries) = fs::read_dir(&self.config.outbox_dir) else { return Ok(0) };
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "eml")
                    && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        paths.sort();
        let mut added = 0;
        for path in paths {
            let Ok(bytes) = fs::read(&path) else { continue };
            let Some(id) = reply::thread_id(&bytes) else { continue };
            if self.ledger.is_processed(&id) {
                continue;
            }
            let mut record = ProcessingRecord::new(&id);
            record.disposition = Disposition::Reconciled;
            let has_form = ingest::parse_inbound(&bytes)
                .map(|r| r.attachments.iter().any(|a| a.media_type == ingest::MediaType::Pdf))
                .unwrap_or(false);
            if has_form {
                for s in &State::CHAIN[1..] {
                    record.advance(*s)?;
                }
            } else {
                record.fail("rejection sent before restart; reconciled from outbox")?;
            }
            record.outputs.reply_sha256 = Some(sha256_hex(&bytes));
            record.outputs.reply_location = Some(path.display().to_string());
            self.ledger.append(&record)?;
            added += 1;
        }
        Ok(added)
    }

    fn checkpoint(&self, state: State) -> Result<(), PipelineError> {
        match self.crash_after {
            Some(s) if s == state => Err(PipelineError::InjectedCrash(state)),
            _ => Ok(()),
        }
    }

    /// Parse and process one raw message.
    pub fn process_raw(&mut self, raw: &[u8]) -> Result<ProcessingRecord, PipelineError> {
        let request = ingest::parse_inbound(raw)?;
        self.process_request(ingest::classify_attachments(request))
    }

    /// Run one request to a terminal state and record it. Requests whose
    /// message id is already in the ledger produce a `Skipped` record and
    /// nothing else. Only ledger failures and injected crashes are errors;
    /// everything else ends as a `Failed` record.
    pub fn process_request(&mut self, request: InboundRequest) -> Result<ProcessingRecord, PipelineError> {
        if self.ledger.is_processed(&request.message_id) {
            log::info!("{}: already processed; skipping", request.message_id);
            let record = ProcessingRecord::skipped(&request.message_id);
            self.ledger.append(&record)?;
            return Ok(record);
        }
        let start = Instant::now();
        let mut record = ProcessingRecord::new(&request.message_id);
        let request = ingest::classify_attachments(request);
        self.checkpoint(State::Received)?;

        let outcome = self.run_stages(&request, &mut record);
        match outcome {
            Ok(()) => {}
            Err(Err(fatal)) => return Err(fatal),
            Err(Ok(failure)) => {
                log::warn!("{}: failed: {}", request.message_id, failure.reason);
                record.fail(failure.reason)?;
                if let Some(message) = failure.user_message {
                    self.send_rejection(&request, &message, &mut record);
                }
            }
        }
        record.warnings.extend(request.warnings.iter().cloned());
        record.timings.insert("total_elapsed".into(), start.elapsed().as_secs_f64());
        record.recorded_at = chrono::Utc::now();
        self.ledger.append(&record)?;
        Ok(record)
    }

    fn send_rejection(&self, request: &InboundRequest, message: &str, record: &mut ProcessingRecord) {
        let sent = reply::compose_rejection(request, message, &self.config.reply_from)
            .map_err(|e| e.to_string())
            .and_then(|rejection| {
                with_retry(&self.config.retry, "reply", &mut record.attempt_counts, |e: &reply::DeliveryError| e.is_retryable(), || {
                    self.sink.send(&rejection)
                })
                .map(|receipt| (rejection, receipt))
                .map_err(|e| e.to_string())
            });
        match sent {
            Ok((rejection, receipt)) => {
                record.outputs.reply_sha256 = Some(sha256_hex(&rejection.bytes));
                record.outputs.reply_location = Some(receipt.location);
            }
            Err(e) => {
                let reason = record.failure_reason.take().unwrap_or_default();
                record.failure_reason = Some(format!("{reason}; rejection not sent: {e}"));
            }
        }
    }

    /// Inner result: `Err(Ok(_))` is a stage failure, `Err(Err(_))` fatal.
    fn run_stages(
        &self,
        request: &InboundRequest,
        record: &mut ProcessingRecord,
    ) -> Result<(), Result<StageFailure, PipelineError>> {
        let Some(target) = request.target_form() else {
            return Err(Ok(StageFailure::new(
                "no target form",
                "no fillable PDF form was attached to your message. Please attach the PDF form to be completed.",
            )));
        };
        let schema = form::read_schema(&target.bytes).map_err(|e| {
            Ok(StageFailure::new(
                format!("form unreadable: {e}"),
                format!("the attached form {:?} could not be read: {e}", target.filename),
            ))
        })?;

        // extraction
        let ocr_start = Instant::now();
        let mut docs: Vec<ExtractedDocument> = Vec::new();
        for attachment in request.context_documents() {
            let doc = with_retry(
                &self.config.retry,
                "ocr",
                &mut record.attempt_counts,
                |e: &extract::ExtractError| e.is_retryable(),
                || extract::extract_text(attachment, self.ocr.as_ref()),
            )
            .map_err(|e| {
                Ok(StageFailure::new(
                    format!("ocr failed for {:?}: {e}", attachment.filename),
                    format!("the attachment {:?} could not be read: {e}", attachment.filename),
                ))
            })?;
            docs.push(extract::filter_blocks(&doc, self.config.min_confidence));
        }
        record.timings.insert("ocr_elapsed".into(), ocr_start.elapsed().as_secs_f64());
        record.advance(State::Extracted).map_err(Err)?;
        self.checkpoint(State::Extracted).map_err(Err)?;

        // planning
        let llm_start = Instant::now();
        let plan = self.plan(request, &schema, &docs, record)?;
        record.timings.insert("llm_elapsed".into(), llm_start.elapsed().as_secs_f64());
        record.plan = Some(plan.clone());
        record.advance(State::Planned).map_err(Err)?;
        self.checkpoint(State::Planned).map_err(Err)?;

        // filling
        let fill_start = Instant::now();
        let filled = form::fill_form(&target.bytes, &plan).map_err(|e| {
            Ok(StageFailure::new(format!("fill failed: {e}"), format!("the form could not be filled: {e}")))
        })?;
        record.timings.insert("fill_elapsed".into(), fill_start.elapsed().as_secs_f64());
        record.outputs.filled_pdf_sha256 = Some(sha256_hex(&filled.bytes));
        record.advance(State::Filled).map_err(Err)?;
        self.checkpoint(State::Filled).map_err(Err)?;

        // reply
        let reply_start = Instant::now();
        let outbound: OutboundReply = reply::compose_reply(request, &filled, &plan, &self.config.reply_from)
            .map_err(|e| Ok(StageFailure { reason: format!("cannot compose reply: {e}"), user_message: None }))?;
        let receipt = with_retry(
            &self.config.retry,
            "reply",
            &mut record.attempt_counts,
            |e: &reply::DeliveryError| e.is_retryable(),
            || self.sink.send(&outbound),
        )
        .map_err(|e| Ok(StageFailure { reason: format!("delivery failed: {e}"), user_message: None }))?;
        if receipt.duplicate {
            record.warnings.push(format!("reply already present at {}; not sent again", receipt.location));
        }
        record.outputs.reply_sha256 = Some(receipt.sha256);
        record.outputs.reply_location = Some(receipt.location);
        record.timings.insert("reply_elapsed".into(), reply_start.elapsed().as_secs_f64());
        record.advance(State::Replied).map_err(Err)?;
        self.checkpoint(State::Replied).map_err(Err)?;
        Ok(())
    }

    fn plan(
        &self,
        request: &InboundRequest,
        schema: &FormSchema,
        docs: &[ExtractedDocument],
        record: &mut ProcessingRecord,
    ) -> Result<CompletionPlan, Result<StageFailure, PipelineError>> {
        let bundle = plan::build_prompt(&request.instruction_text, schema, &extract::render_context(docs))
            .map_err(|e| Ok(StageFailure::new(format!("prompt: {e}"), format!("the attached form has no usable fields: {e}"))))?;
        let llm_failure = |e: plan::LlmError| {
            Ok(StageFailure::new(
                format!("llm failed: {e}"),
                "the completion service could not be reached. Please resend your request later.",
            ))
        };
        let ask = |bundle: &plan::PromptBundle, attempts: &mut BTreeMap<String, u32>| {
            with_retry(&self.config.retry, "llm", attempts, |e: &plan::LlmError| e.is_retryable(), || {
                plan::request_plan(bundle, self.llm.as_ref())
            })
        };

        let first = ask(&bundle, &mut record.attempt_counts).map_err(llm_failure)?;
        let mut elapsed = first.elapsed_s;
        let mut plan = match plan::parse_plan(&first.text, schema) {
            Ok(plan) => plan,
            Err(err) => {
                log::warn!("{}: unusable model reply ({err}); sending one repair request", request.message_id);
                let repair = plan::repair_request(&bundle, &first.text, &err);
                let second = ask(&repair, &mut record.attempt_counts).map_err(llm_failure)?;
                elapsed += second.elapsed_s;
                plan::parse_plan(&second.text, schema).map_err(|e| {
                    Ok(StageFailure::new(
                        format!("plan parse: {e}"),
                        "the completion service returned an unusable answer twice. Please resend your request later.",
                    ))
                })?
            }
        };
        plan.model_name = self.llm.model_name().to_string();
        plan.elapsed_s = elapsed;
        Ok(plan)
    }

    /// One poll of `inbox`: process every new message, then persist the
    /// cursor. Poll failures are logged and reported in the summary.
    pub fn tick(&mut self, inbox: &dyn MailboxSource, cursor_path: &Path) -> Result<TickSummary, PipelineError> {
        let mut summary = TickSummary::default();
        let cursor = match Cursor::load(cursor_path) {
            Ok(c) => c,
            Err(e) => {
                summary.warnings.push(format!("cursor unreadable, starting fresh: {e}"));
                Cursor::default()
            }
        };
        let outcome = match ingest::poll_inbox(inbox, &cursor) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("poll failed: {e}");
                summary.warnings.push(format!("poll failed: {e}"));
                return Ok(summary);
            }
        };
        summary.warnings.extend(outcome.warnings);
        summary.polled = outcome.messages.len();
        for message in &outcome.messages {
            match self.process_raw(&message.bytes) {
                Ok(r) if r.disposition == Disposition::Skipped => summary.skipped += 1,
                Ok(r) if r.state == State::Replied => summary.replied += 1,
                Ok(_) => summary.failed += 1,
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => {
                    log::warn!("{}: {e}", message.key);
                    summary.warnings.push(format!("{}: {e}", message.key));
                }
            }
        }
        if let Err(e) = outcome.cursor.save(cursor_path) {
            log::warn!("cannot save cursor: {e}");
            summary.warnings.push(format!("cannot save cursor: {e}"));
        }
        Ok(summary)
    }
}

/// Poll the configured inbox every `poll_interval_s` until `shutdown` is set.
/// A request in flight when shutdown is requested is finished first.
pub fn run_daemon(config: Config, shutdown: &AtomicBool) -> Result<(), PipelineError> {
    let inbox = Maildir::new(&config.inbox_dir);
    let cursor_path = config.cursor_path();
    let interval = Duration::from_secs_f64(config.poll_interval_s);
    let mut pipeline = Pipeline::new(config)?;
    log::info!("watching {}", inbox.path().display());
    while !shutdown.load(Ordering::SeqCst) {
        let summary = pipeline.tick(&inbox, &cursor_path)?;
        if summary.polled > 0 {
            log::info!(
                "tick: {} new, {} replied, {} failed, {} skipped",
                summary.polled,
                summary.replied,
                summary.failed,
                summary.skipped
            );
        }
        let deadline = Instant::now() + interval;
        while !shutdown.load(Ordering::SeqCst) && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(50).min(interval));
        }
    }
    log::info!("shutdown requested; exiting");
    Ok(())
}
