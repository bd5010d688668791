//! End-to-end scenarios shared by the integration tests and the acceptance
//! target. Each returns a one-line summary or a description of the failure.

use std::fs;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use mailform::form::read_back;
use mailform::ingest::{parse_inbound, MediaType};
use mailform::pipeline::{Disposition, PipelineError, State};
use mailform::reply::thread_id;

use super::*;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

pub const STAGE_TIMINGS: [&str; 5] = ["ocr_elapsed", "llm_elapsed", "fill_elapsed", "reply_elapsed", "total_elapsed"];

pub fn golden_path() -> Result<String, String> {
    let env = hermetic_env();
    let written = Arc::new(AtomicUsize::new(0));
    let start = Instant::now();
    let mut pipeline = pipeline_with(&env.config, Box::new(golden_llm(&env.config)), written.clone());
    let record = pipeline.process_raw(&golden_eml()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();

    ensure!(record.state == State::Replied, "state {:?} ({:?})", record.state, record.failure_reason);
    ensure!(elapsed < 2.0, "took {elapsed:.3}s");
    for key in STAGE_TIMINGS {
        ensure!(record.timings.contains_key(key), "ledger record lacks timing {key}");
    }
    let (ledger, _) = mailform::pipeline::replay(&env.config.ledger_path).map_err(|e| e.to_string())?;
    ensure!(ledger.len() == 1 && ledger[0].timings == record.timings, "ledger does not hold the record");

    let files = outbox_files(&env.config);
    ensure!(files.len() == 1, "{} outbox files", files.len());
    let reply = fs::read(&files[0]).map_err(|e| e.to_string())?;
    ensure!(thread_id(&reply).as_deref() == Some(GOLDEN_ID), "In-Reply-To {:?}", thread_id(&reply));
    let parsed = parse_inbound(&reply).map_err(|e| e.to_string())?;
    let pdf = parsed
        .attachments
        .iter()
        .find(|a| a.media_type == MediaType::Pdf)
        .ok_or("reply has no PDF attachment")?;
    ensure!(
        record.outputs.filled_pdf_sha256.as_deref() == Some(pdf.digest().as_str()),
        "attached PDF differs from the recorded one"
    );
    let read = read_back(&pdf.bytes).map_err(|e| e.to_string())?;

    let plan = record.plan.as_ref().ok_or("record has no plan")?;
    let expected = golden_plan();
    ensure!(plan.observed().len() == expected.len(), "plan covers {} fields", plan.entries.len());
    let mut applied = 0;
    for (field, want) in &expected {
        let got = read.get(field).ok_or(format!("field {field:?} missing from filled form"))?;
        let planned = plan.entries.get(field).and_then(|v| v.as_value()).map(str::to_string);
        ensure!(&planned == want, "plan for {field:?} is {planned:?}, expected {want:?}");
        match want {
            Some(v) => {
                ensure!(got == v, "{field:?} reads back {got:?}, planned {v:?}");
                applied += 1;
            }
            None => ensure!(got.is_empty(), "blank field {field:?} reads back {got:?}"),
        }
    }
    Ok(format!(
        "Replied in {:.0} ms; {applied}/{applied} applied fields read back, {} blanks empty, In-Reply-To <{GOLDEN_ID}>",
        elapsed * 1000.0,
        expected.len() - applied
    ))
}

/// Crash right after each state, restart, redeliver; count replies written.
pub fn crash_and_redelivery() -> Result<String, String> {
    let mut points = 0;
    for crash in State::CHAIN {
        let env = hermetic_env();
        let written = Arc::new(AtomicUsize::new(0));
        {
            let mut p = pipeline_with(&env.config, Box::new(golden_llm(&env.config)), written.clone());
            p.crash_after = Some(crash);
            match p.process_raw(&golden_eml()) {
                Err(PipelineError::InjectedCrash(s)) if s == crash => {}
                other => return Err(format!("crash after {crash:?} not injected: {other:?}")),
            }
        }
        for restart in 0..2 {
            let mut p = pipeline_with(&env.config, Box::new(golden_llm(&env.config)), written.clone());
            let record = p.process_raw(&golden_eml()).map_err(|e| e.to_string())?;
            let ok = match restart {
                0 if crash == State::Replied => record.disposition == Disposition::Skipped,
                0 => record.state == State::Replied,
                _ => record.disposition == Disposition::Skipped,
            };
            ensure!(ok, "crash after {crash:?}, restart {restart}: {:?} {:?}", record.disposition, record.state);
            ensure!(
                p.ledger().final_state(GOLDEN_ID) == Some(State::Replied),
                "crash after {crash:?}: ledger final state {:?}",
                p.ledger().final_state(GOLDEN_ID)
            );
        }
        let replies = outbox_files(&env.config).len();
        let sent = written.load(Ordering::SeqCst);
        ensure!(replies == 1 && sent == 1, "crash after {crash:?}: {replies} outbox files, {sent} replies written");
        points += 1;
    }

    // plain redelivery without a crash
    let env = hermetic_env();
    let written = Arc::new(AtomicUsize::new(0));
    let mut p = pipeline_with(&env.config, Box::new(golden_llm(&env.config)), written.clone());
    p.process_raw(&golden_eml()).map_err(|e| e.to_string())?;
    let again = p.process_raw(&golden_eml()).map_err(|e| e.to_string())?;
    ensure!(again.disposition == Disposition::Skipped, "redelivery not skipped");
    ensure!(written.load(Ordering::SeqCst) == 1, "redelivery wrote a second reply");
    Ok(format!("0 duplicate replies over {points} crash points plus redelivery"))
}

/// Failed record, rejection reply that names the problem, and exit 3 from the CLI.
pub fn rejection() -> Result<String, String> {
    let env = hermetic_env();
    let written = Arc::new(AtomicUsize::new(0));
    let mut p = pipeline_with(&env.config, Box::new(golden_llm(&env.config)), written);
    let record = p.process_raw(&no_form_eml()).map_err(|e| e.to_string())?;
    ensure!(record.state == State::Failed, "state {:?}", record.state);
    ensure!(record.failure_reason.as_deref() == Some("no target form"), "reason {:?}", record.failure_reason);
    let files = outbox_files(&env.config);
    ensure!(files.len() == 1, "{} outbox files", files.len());
    let reply = fs::read(&files[0]).map_err(|e| e.to_string())?;
    ensure!(thread_id(&reply).as_deref() == Some(NO_FORM_ID), "rejection not threaded");
    let body = parse_inbound(&reply).map_err(|e| e.to_string())?.instruction_text;
    ensure!(body.contains("no fillable PDF form"), "rejection does not name the problem: {body:?}");

    let cli_env = hermetic_env();
    let config = write_config(&cli_env);
    let eml = cli_env.dir.path().join("request.eml");
    fs::write(&eml, no_form_eml()).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_mailform"))
        .arg("--config")
        .arg(&config)
        .arg("process")
        .arg(&eml)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.code() == Some(3), "process exited with {:?}", out.status.code());
    ensure!(outbox_files(&cli_env.config).len() == 1, "CLI run wrote no rejection");
    Ok("Failed (no target form), rejection names the missing PDF form, process exit 3".into())
}
