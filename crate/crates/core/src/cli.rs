//! Command-line front end. Exit codes: 0 success, 2 usage or configuration
//! error, 3 processing error (1 only for a fatal ledger error in `daemon`).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::eval::{self, CostParams, GoldKey};
use crate::extract::{self, OcrBackend, RemoteOcr, StubOcr};
use crate::form::{self, FieldSpec, FormSchema};
use crate::ingest::{Attachment, AttachmentKind, MediaType};
use crate::pipeline::{self, Config, OcrConfig, Pipeline, State, CONFIG_ENV};
use crate::plan::CompletionPlan;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mailform", version, about = "Fill PDF forms from emailed requests")]
pub struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Print a single JSON document on stdout; human text goes to stderr.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Watch the inbox and answer requests until interrupted.
    Daemon {
        /// Run a single poll and exit.
        #[arg(long)]
        once: bool,
    },
    /// Process one .eml file and print its ledger record.
    Process { eml: PathBuf },
    /// Fill a PDF form from a JSON plan (field name to string or null).
    Fill { pdf: PathBuf, plan: PathBuf, out: PathBuf },
    /// Print the interactive fields of a PDF form.
    Schema { pdf: PathBuf },
    /// Extract text from a context document (PDF, PNG, JPEG, TIFF).
    Extract {
        file: PathBuf,
        /// Directory of OCR sidecar files; overrides the configured backend.
        #[arg(long)]
        ocr_fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        min_confidence: f64,
    },
    /// Score observed plans against a gold key.
    Eval {
        /// Form PDF, or a schema JSON file as printed by `schema --json`.
        schema: PathBuf,
        gold: PathBuf,
        /// Directory of `<label>.json` observed plans.
        runs: PathBuf,
    },
    /// Per-form cost of manual versus assisted completion.
    Cost(CostArgs),
    /// Generate a fillable test form from a JSON list of field specs.
    GenForm { spec: PathBuf, out: PathBuf },
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, default_value_t = 40000.0)]
    pub annual_salary: f64,
    #[arg(long, default_value_t = 40.0)]
    pub hours_per_week: f64,
    #[arg(long, default_value_t = 52.0)]
    pub weeks_per_year: f64,
    #[arg(long, default_value_t = 15.0)]
    pub manual_minutes: f64,
    #[arg(long, default_value_t = 5.0)]
    pub supervision_minutes: f64,
    #[arg(long, default_value_t = 0.10)]
    pub cloud_cost: f64,
}

impl From<&CostArgs> for CostParams {
    fn from(a: &CostArgs) -> Self {
        CostParams {
            annual_salary_eur: a.annual_salary,
            hours_per_week: a.hours_per_week,
            weeks_per_year: a.weeks_per_year,
            manual_minutes: a.manual_minutes,
            supervision_minutes: a.supervision_minutes,
            cloud_cost_eur: a.cloud_cost,
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn failed(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_FAILED, message: message.into() }
}

type CmdResult = Result<i32, Failure>;

struct Io<'a> {
    json: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    /// JSON mode prints `value`; text mode prints `text`.
    fn emit<T: Serialize>(&mut self, value: &T, text: &str) {
        if self.json {
            let _ = writeln!(self.out, "{}", serde_json::to_string_pretty(value).expect("output serializes"));
        } else {
            let _ = write!(self.out, "{text}");
            if !text.ends_with('\n') {
                let _ = writeln!(self.out);
            }
        }
    }

    /// Human-readable note: stderr in JSON mode, stdout otherwise.
    fn note(&mut self, text: &str) {
        let sink: &mut dyn Write = if self.json { &mut *self.err } else { &mut *self.out };
        let _ = writeln!(sink, "{text}");
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn load_config(cli_path: &Option<PathBuf>) -> Result<Config, Failure> {
    let path = cli_path
        .as_ref()
        .ok_or_else(|| usage(format!("a configuration file is required: pass --config or set {CONFIG_ENV}")))?;
    Config::load(path).map_err(|e| usage(e.to_string()))
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, shutdown: &AtomicBool, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let mut io = Io { json: cli.json, out, err };
    match dispatch(&cli, shutdown, &mut io) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(io.err, "error: {}", f.message);
            if f.code == EXIT_USAGE {
                let _ = writeln!(io.err, "run `mailform --help` for usage");
            }
            f.code
        }
    }
}

fn dispatch(cli: &Cli, shutdown: &AtomicBool, io: &mut Io<'_>) -> CmdResult {
    match &cli.command {
        Command::Daemon { once } => cmd_daemon(load_config(&cli.config)?, *once, shutdown, io),
        Command::Process { eml } => cmd_process(eml, &cli.config, io),
        Command::Fill { pdf, plan, out } => cmd_fill(pdf, plan, out, io),
        Command::Schema { pdf } => cmd_schema(pdf, io),
        Command::Extract { file, ocr_fixtures, min_confidence } => {
            cmd_extract(file, ocr_fixtures.as_deref(), *min_confidence, &cli.config, io)
        }
        Command::Eval { schema, gold, runs } => cmd_eval(schema, gold, runs, io),
        Command::Cost(args) => cmd_cost(args, io),
        Command::GenForm { spec, out } => cmd_gen_form(spec, out, io),
    }
}

fn cmd_daemon(config: Config, once: bool, shutdown: &AtomicBool, io: &mut Io<'_>) -> CmdResult {
    let fatal = |e: pipeline::PipelineError| {
        if e.is_fatal() {
            Failure { code: EXIT_FATAL, message: e.to_string() }
        } else {
            usage(e.to_string())
        }
    };
    if once {
        let inbox = crate::ingest::Maildir::new(&config.inbox_dir);
        let cursor = config.cursor_path();
        let mut p = Pipeline::new(config).map_err(fatal)?;
        let s = p.tick(&inbox, &cursor).map_err(fatal)?;
        for w in &s.warnings {
            let _ = writeln!(io.err, "warning: {w}");
        }
        let summary = serde_json::json!({
            "polled": s.polled, "replied": s.replied, "failed": s.failed, "skipped": s.skipped,
        });
        io.emit(
            &summary,
            &format!("{} new, {} replied, {} failed, {} skipped", s.polled, s.replied, s.failed, s.skipped),
        );
        return Ok(EXIT_OK);
    }
    pipeline::run_daemon(config, shutdown).map_err(fatal)?;
    Ok(EXIT_OK)
}

fn cmd_process(eml: &Path, config: &Option<PathBuf>, io: &mut Io<'_>) -> CmdResult {
    let raw = read(eml)?;
    let config = load_config(config)?;
    let mut p = Pipeline::new(config).map_err(|e| usage(e.to_string()))?;
    let record = match p.process_raw(&raw) {
        Ok(r) => r,
        Err(pipeline::PipelineError::Ledger { path, reason }) => {
            return Err(Failure { code: EXIT_FATAL, message: format!("ledger {path}: {reason}") });
        }
        Err(e) => return Err(failed(format!("{}: {e}", eml.display()))),
    };
    // the record is the result, printed as JSON in either mode
    let _ = writeln!(io.out, "{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    let summary = match (&record.state, &record.failure_reason) {
        (State::Failed, Some(r)) => format!("{}: Failed ({r})", record.message_id),
        (s, _) => format!("{}: {s:?} ({:?})", record.message_id, record.disposition),
    };
    let _ = writeln!(io.err, "{summary}");
    Ok(if record.state == State::Failed { EXIT_FAILED } else { EXIT_OK })
}

fn cmd_fill(pdf: &Path, plan: &Path, out: &Path, io: &mut Io<'_>) -> CmdResult {
    let bytes = read(pdf)?;
    let schema = form::read_schema(&bytes).map_err(|e| failed(format!("{}: {e}", pdf.display())))?;
    let plan = CompletionPlan::from_json_strict(&read_text(plan)?, &schema)
        .map_err(|e| failed(format!("{}: {e}", plan.display())))?;
    let filled = form::fill_form(&bytes, &plan).map_err(|e| failed(e.to_string()))?;
    fs::write(out, &filled.bytes).map_err(|e| failed(format!("cannot write {}: {e}", out.display())))?;
    let mut text = format!("wrote {} ({} fields filled", out.display(), filled.applied.len());
    text.push_str(&format!(", {} skipped)\n", filled.skipped.len()));
    for (name, reason) in &filled.skipped {
        text.push_str(&format!("  skipped {name}: {reason}\n"));
    }
    for (name, note) in &filled.notes {
        text.push_str(&format!("  note {name}: {note}\n"));
    }
    io.emit(&filled, &text);
    Ok(EXIT_OK)
}

fn cmd_schema(pdf: &Path, io: &mut Io<'_>) -> CmdResult {
    let schema = form::read_schema(&read(pdf)?).map_err(|e| failed(format!("{}: {e}", pdf.display())))?;
    let mut text = String::new();
    for f in &schema.fields {
        let detail = match &f.kind {
            form::FieldKind::Text { max_len: Some(n) } => format!("Text (max {n})"),
            form::FieldKind::Choice { options } => format!("Choice [{}]", options.join(", ")),
            k => k.label().to_string(),
        };
        text.push_str(&format!("{}\t{}\tpage {}\n", f.name, detail, f.page));
    }
    if schema.is_empty() {
        text.push_str("no interactive fields\n");
    } else {
        text.push_str(&format!("schema digest {}\n", schema.schema_digest()));
    }
    io.emit(&schema, &text);
    Ok(EXIT_OK)
}

fn cmd_extract(
    file: &Path,
    ocr_fixtures: Option<&Path>,
    min_confidence: f64,
    config: &Option<PathBuf>,
    io: &mut Io<'_>,
) -> CmdResult {
    let bytes = read(file)?;
    let filename = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let media_type = MediaType::resolve("application/octet-stream", &filename);
    if !media_type.is_accepted() {
        return Err(failed(format!("{filename}: unsupported media type {}", media_type.as_str())));
    }
    let backend: Box<dyn OcrBackend> = match (ocr_fixtures, config) {
        (Some(dir), _) => Box::new(StubOcr::new(dir)),
        (None, Some(_)) => {
            let config = load_config(config)?;
            match &config.ocr {
                OcrConfig::Stub => Box::new(StubOcr::new(config.ocr_fixtures())),
                OcrConfig::Remote(c) => Box::new(RemoteOcr::new(c.clone()).map_err(|e| usage(e.to_string()))?),
            }
        }
        (None, None) => Box::new(StubOcr::new(".")),
    };
    let attachment = Attachment { filename, media_type, bytes, kind: AttachmentKind::ContextDocument };
    let doc = extract::extract_text(&attachment, backend.as_ref()).map_err(|e| failed(e.to_string()))?;
    let doc = extract::filter_blocks(&doc, min_confidence);
    let text: String = doc.blocks.iter().map(|b| format!("{}\n", b.text)).collect();
    io.emit(&doc, &text);
    Ok(EXIT_OK)
}

/// Schema from a form PDF or a schema JSON file.
fn load_schema(path: &Path) -> Result<FormSchema, Failure> {
    let bytes = read(path)?;
    if bytes.starts_with(b"%PDF-") {
        form::read_schema(&bytes).map_err(|e| failed(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_slice(&bytes).map_err(|e| failed(format!("{}: not a PDF or schema JSON: {e}", path.display())))
    }
}

fn cmd_eval(schema: &Path, gold: &Path, runs: &Path, io: &mut Io<'_>) -> CmdResult {
    let schema = load_schema(schema)?;
    let gold_key = GoldKey::from_json(&read_text(gold)?).map_err(|e| failed(format!("{}: {e}", gold.display())))?;
    let entries = fs::read_dir(runs).map_err(|e| usage(format!("cannot read {}: {e}", runs.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut observed = Vec::with_capacity(files.len());
    for path in &files {
        let label = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let values =
            eval::observed_from_json(&read_text(path)?).map_err(|e| failed(format!("{}: {e}", path.display())))?;
        observed.push((label, values));
    }
    let rows = eval::score_batch(&observed, &gold_key, &schema).map_err(|e| failed(e.to_string()))?;
    io.emit(&rows, &eval::render_table(&rows));
    Ok(EXIT_OK)
}

fn cmd_cost(args: &CostArgs, io: &mut Io<'_>) -> CmdResult {
    let report = eval::cost_model(&CostParams::from(args)).map_err(|e| usage(e.to_string()))?;
    io.emit(&report, &report.to_string());
    Ok(EXIT_OK)
}

fn cmd_gen_form(spec: &Path, out: &Path, io: &mut Io<'_>) -> CmdResult {
    let specs: Vec<FieldSpec> = serde_json::from_str(&read_text(spec)?)
        .map_err(|e| failed(format!("{}: expected a JSON list of field specs: {e}", spec.display())))?;
    let pdf = form::generate_test_form(&specs).map_err(|e| failed(e.to_string()))?;
    fs::write(out, &pdf).map_err(|e| failed(format!("cannot write {}: {e}", out.display())))?;
    let schema = form::read_schema(&pdf).map_err(|e| failed(e.to_string()))?;
    io.note(&format!("wrote {} with {} fields", out.display(), schema.fields.len()));
    if io.json {
        io.emit(&schema, "");
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("mailform").chain(args.iter().copied()), &AtomicBool::new(false), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn cost_defaults() {
        let (code, out, _) = run_capture(&["cost"]);
        assert_eq!(code, 0);
        assert!(out.contains("4.81") && out.contains("1.70") && out.contains("64.6"), "{out}");
    }

    #[test]
    fn cost_json_is_one_document() {
        let (code, out, _) = run_capture(&["--json", "cost", "--manual-minutes", "20"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["manual_cost_eur"].as_f64().unwrap() - 6.41).abs() < 0.005);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_capture(&[]).0, 2);
        assert_eq!(run_capture(&["frobnicate"]).0, 2);
        assert_eq!(run_capture(&["cost", "--hours-per-week", "0"]).0, 2);
        assert_eq!(run_capture(&["schema", "/nonexistent.pdf"]).0, 2);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }
}
