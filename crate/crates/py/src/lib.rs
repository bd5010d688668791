//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists (through JSON); PDFs and messages as `bytes`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mailform::eval::{self, CostParams, GoldKey};
use mailform::form::{self, FieldSpec, FormSchema};
use mailform::ingest::{self, Maildir};
use mailform::pipeline::{self, Config};
use mailform::plan::{self, CompletionPlan, PlanValue};
use mailform::util::sha256_hex;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;
use serde_json::json;

create_exception!(mailform_py, MailformError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    MailformError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// Schema from a form PDF (`bytes`) or a schema dict.
fn schema_of(value: &Bound<'_, PyAny>) -> PyResult<FormSchema> {
    match value.extract::<Vec<u8>>() {
        Ok(bytes) if value.is_instance_of::<PyBytes>() => form::read_schema(&bytes).map_err(err),
        _ => from_py(value),
    }
}

/// Observed values; None counts as empty.
fn observed(values: BTreeMap<String, Option<String>>) -> BTreeMap<String, String> {
    values.into_iter().map(|(k, v)| (k, v.unwrap_or_default())).collect()
}

fn plan_from(schema: &FormSchema, values: BTreeMap<String, Option<String>>) -> PyResult<CompletionPlan> {
    let text = serde_json::to_string(&values).map_err(err)?;
    CompletionPlan::from_json_strict(&text, schema).map_err(err)
}

#[pyclass(frozen, get_all, module = "mailform_py")]
struct CostReport {
    hourly_wage_eur: f64,
    manual_minutes: f64,
    system_minutes: f64,
    manual_cost_eur: f64,
    system_cost_eur: f64,
    savings_eur: f64,
    savings_pct: f64,
    text: String,
}

#[pymethods]
impl CostReport {
    fn __repr__(&self) -> String {
        format!(
            "CostReport(manual_cost_eur={:.4}, system_cost_eur={:.4}, savings_eur={:.4}, savings_pct={:.4})",
            self.manual_cost_eur, self.system_cost_eur, self.savings_eur, self.savings_pct
        )
    }

    fn __str__(&self) -> String {
        self.text.clone()
    }
}

#[pyfunction]
#[pyo3(signature = (annual_salary=40_000.0, hours_per_week=40.0, weeks_per_year=52.0, manual_minutes=15.0, supervision_minutes=5.0, cloud_cost=0.10))]
fn cost_model(
    annual_salary: f64,
    hours_per_week: f64,
    weeks_per_year: f64,
    manual_minutes: f64,
    supervision_minutes: f64,
    cloud_cost: f64,
) -> PyResult<CostReport> {
    let r = eval::cost_model(&CostParams {
        annual_salary_eur: annual_salary,
        hours_per_week,
        weeks_per_year,
        manual_minutes,
        supervision_minutes,
        cloud_cost_eur: cloud_cost,
    })
    .map_err(err)?;
    Ok(CostReport {
        hourly_wage_eur: r.hourly_wage_eur,
        manual_minutes: r.manual_minutes,
        system_minutes: r.system_minutes,
        manual_cost_eur: r.manual_cost_eur,
        system_cost_eur: r.system_cost_eur,
        savings_eur: r.savings_eur,
        savings_pct: r.savings_pct,
        text: r.to_string(),
    })
}

#[pyclass(frozen, get_all, module = "mailform_py")]
struct ScoreReport {
    correct: usize,
    incorrect: usize,
    blank: usize,
    total: usize,
    per_field: BTreeMap<String, String>,
}

#[pymethods]
impl ScoreReport {
    fn counts(&self) -> (usize, usize, usize) {
        (self.correct, self.incorrect, self.blank)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreReport(correct={}, incorrect={}, blank={}, total={})",
            self.correct, self.incorrect, self.blank, self.total
        )
    }
}

/// Score observed values (field → string or None) against a gold key (field →
/// string or None) for the form given as PDF bytes or schema dict.
#[pyfunction]
fn score_plan(
    observed_values: BTreeMap<String, Option<String>>,
    gold: BTreeMap<String, Option<String>>,
    schema: &Bound<'_, PyAny>,
) -> PyResult<ScoreReport> {
    let schema = schema_of(schema)?;
    let r = eval::score_plan(&observed(observed_values), &GoldKey::from_options(gold), &schema).map_err(err)?;
    Ok(ScoreReport {
        correct: r.correct,
        incorrect: r.incorrect,
        blank: r.blank,
        total: r.total,
        per_field: r.per_field.iter().map(|(k, v)| (k.clone(), format!("{v:?}"))).collect(),
    })
}

/// Table of labelled runs, sorted as `mailform eval` prints them.
#[pyfunction]
fn score_batch<'py>(
    py: Python<'py>,
    runs: Vec<(String, BTreeMap<String, Option<String>>)>,
    gold: BTreeMap<String, Option<String>>,
    schema: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let schema = schema_of(schema)?;
    let runs: Vec<_> = runs.into_iter().map(|(label, values)| (label, observed(values))).collect();
    let rows = eval::score_batch(&runs, &GoldKey::from_options(gold), &schema).map_err(err)?;
    to_py(py, &rows)
}

#[pyfunction]
fn read_schema<'py>(py: Python<'py>, pdf: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let schema = form::read_schema(pdf).map_err(err)?;
    let mut value = serde_json::to_value(&schema).map_err(err)?;
    value["schema_digest"] = json!(schema.schema_digest());
    to_py(py, &value)
}

#[pyfunction]
fn read_back(pdf: &[u8]) -> PyResult<BTreeMap<String, String>> {
    form::read_back(pdf).map_err(err)
}

/// Fill `pdf` from field → value (None leaves the field blank). Returns the
/// filled bytes and a dict with `applied`, `skipped` and `notes`.
#[pyfunction]
fn fill_form<'py>(
    py: Python<'py>,
    pdf: &[u8],
    plan: BTreeMap<String, Option<String>>,
) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyAny>)> {
    let schema = form::read_schema(pdf).map_err(err)?;
    let filled = form::fill_form(pdf, &plan_from(&schema, plan)?).map_err(err)?;
    Ok((PyBytes::new(py, &filled.bytes), to_py(py, &filled)?))
}

/// Fillable PDF from a list of field specs such as
/// `{"name": "DNI", "kind": "Text", "max_len": 9}`.
#[pyfunction]
fn generate_test_form<'py>(py: Python<'py>, fields: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let specs: Vec<FieldSpec> = from_py(fields)?;
    Ok(PyBytes::new(py, &form::generate_test_form(&specs).map_err(err)?))
}

/// Parse and classify a raw message.
#[pyfunction]
fn parse_inbound<'py>(py: Python<'py>, eml: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let r = ingest::classify_attachments(ingest::parse_inbound(eml).map_err(err)?);
    let attachments: Vec<_> = r
        .attachments
        .iter()
        .map(|a| {
            json!({
                "filename": a.filename,
                "media_type": a.media_type.as_str(),
                "kind": format!("{:?}", a.kind),
                "size": a.bytes.len(),
                "sha256": sha256_hex(&a.bytes),
            })
        })
        .collect();
    to_py(
        py,
        &json!({
            "message_id": r.message_id,
            "message_id_synthesized": r.message_id_synthesized,
            "sender": r.sender,
            "subject": r.subject,
            "instruction_text": r.instruction_text,
            "received_at": r.received_at,
            "attachments": attachments,
            "warnings": r.warnings,
        }),
    )
}

/// Prompt for a form (PDF bytes or schema dict): `(system, user, schema_digest)`.
#[pyfunction]
fn build_prompt(instruction: &str, schema: &Bound<'_, PyAny>, context: &str) -> PyResult<(String, String, String)> {
    let b = plan::build_prompt(instruction, &schema_of(schema)?, context).map_err(err)?;
    Ok((b.system_text, b.user_text, b.schema_digest))
}

/// Parse a model reply into field → value or None.
#[pyfunction]
fn parse_plan(raw: &str, schema: &Bound<'_, PyAny>) -> PyResult<BTreeMap<String, Option<String>>> {
    let plan = plan::parse_plan(raw, &schema_of(schema)?).map_err(err)?;
    Ok(plan
        .entries
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                PlanValue::Value(s) => Some(s),
                PlanValue::IntentionalBlank => None,
            };
            (k, v)
        })
        .collect())
}

/// The request pipeline with backends taken from a JSON config file.
#[pyclass(unsendable, module = "mailform_py")]
struct Pipeline {
    inner: pipeline::Pipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    fn new(config_path: PathBuf) -> PyResult<Self> {
        let config = Config::load(&config_path).map_err(err)?;
        Ok(Self { inner: pipeline::Pipeline::new(config).map_err(err)? })
    }

    /// Process one raw message; returns its ledger record.
    fn process<'py>(&mut self, py: Python<'py>, eml: &[u8]) -> PyResult<Bound<'py, PyAny>> {
        let record = self.inner.process_raw(eml).map_err(err)?;
        to_py(py, &record)
    }

    /// One poll of the configured inbox.
    fn tick<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let config = self.inner.config().clone();
        let s = self.inner.tick(&Maildir::new(&config.inbox_dir), &config.cursor_path()).map_err(err)?;
        to_py(
            py,
            &json!({"polled": s.polled, "replied": s.replied, "failed": s.failed, "skipped": s.skipped, "warnings": s.warnings}),
        )
    }

    fn is_processed(&self, message_id: &str) -> bool {
        self.inner.ledger().is_processed(message_id)
    }
}

#[pymodule]
fn mailform_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MailformError", m.py().get_type::<MailformError>())?;
    m.add_class::<CostReport>()?;
    m.add_class::<ScoreReport>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(cost_model, m)?)?;
    m.add_function(wrap_pyfunction!(score_plan, m)?)?;
    m.add_function(wrap_pyfunction!(score_batch, m)?)?;
    m.add_function(wrap_pyfunction!(read_schema, m)?)?;
    m.add_function(wrap_pyfunction!(read_back, m)?)?;
    m.add_function(wrap_pyfunction!(fill_form, m)?)?;
    m.add_function(wrap_pyfunction!(generate_test_form, m)?)?;
    m.add_function(wrap_pyfunction!(parse_inbound, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_plan, m)?)?;
    Ok(())
}
