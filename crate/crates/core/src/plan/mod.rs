//! Completion planning: prompt assembly, model invocation and structured
//! output parsing.
//!
//! The model is asked for one flat JSON object mapping every field name to a
//! string or `null`. `null` is the only blank marker and means the context did
//! not contain the information, which is different from the model failing to
//! answer. Parsing is total: every schema field ends up as either a value or
//! an intentional blank.

mod backend;
mod json;

pub use backend::{LlmBackend, LlmError, MockLlm, MockReply, RemoteLlm, RemoteLlmConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::form::{FieldKind, FormSchema};
use crate::util::normalize_name;

pub const SECTION_INSTRUCTION: &str = "[INSTRUCTION]";
pub const SECTION_CONTEXT: &str = "[CONTEXT]";
pub const SECTION_FIELDS: &str = "[FIELDS]";
pub const SECTION_OUTPUT: &str = "[OUTPUT FORMAT]";
pub const SECTION_CORRECTION: &str = "[CORRECTION]";

const SYSTEM_TEXT: &str = "You complete administrative PDF forms on behalf of office staff. \
You receive the instruction from an email, the text recovered from its attached documents, \
and the list of form fields. Fill a field only when the instruction or the documents state its value. \
Never guess or invent data; leave a field blank when the information is missing.";

const OUTPUT_DIRECTIVE: &str = "Respond with a single JSON object and nothing else. \
Its keys are exactly the field names listed above. Each value is either a string with the text to write \
into that field, or null, meaning insufficient information: leave the field blank. \
For checkboxes use \"true\" to tick the box or null to leave it unticked. \
For choice fields use one of the listed options verbatim. Invent nothing.";

/// One planned field decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanValue {
    Value(String),
    IntentionalBlank,
}

impl PlanValue {
    pub fn as_value(&self) -> Option<&str> {
        match self {
            PlanValue::Value(v) => Some(v),
            PlanValue::IntentionalBlank => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionPlan {
    pub entries: BTreeMap<String, PlanValue>,
    pub warnings: Vec<String>,
    pub model_name: String,
    pub elapsed_s: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("schema has no fields")]
    EmptySchema,
    #[error("plan names field {0:?} which is not in the form")]
    UnknownField(String),
    #[error("plan value for {0:?} must be a string or null")]
    BadValue(String),
    #[error("plan is not a JSON object: {0}")]
    NotAnObject(String),
}

/// The model reply contained no usable JSON object.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("no parseable JSON object in model reply: {reason}")]
pub struct PlanParseError {
    pub reason: String,
}

impl CompletionPlan {
    /// Plan with every field intentionally blank.
    pub fn all_blank(schema: &FormSchema) -> Self {
        Self {
            entries: schema.fields.iter().map(|f| (f.name.clone(), PlanValue::IntentionalBlank)).collect(),
            warnings: Vec::new(),
            model_name: String::new(),
            elapsed_s: 0.0,
        }
    }

    /// Strict reader for operator-supplied plan files: a JSON object of field
    /// name to string or null. Unknown names are errors, missing names become
    /// intentional blanks.
    pub fn from_json_strict(text: &str, schema: &FormSchema) -> Result<Self, PlanError> {
        let value: Value = serde_json::from_str(text).map_err(|e| PlanError::NotAnObject(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(PlanError::NotAnObject("top-level value is not an object".into()));
        };
        let mut plan = Self::all_blank(schema);
        for (key, value) in map {
            let name = normalize_name(&key);
            let slot = plan.entries.get_mut(&name).ok_or_else(|| PlanError::UnknownField(key.clone()))?;
            *slot = match value {
                Value::Null => PlanValue::IntentionalBlank,
                Value::String(s) if s.trim().is_empty() => PlanValue::IntentionalBlank,
                Value::String(s) => PlanValue::Value(s),
                _ => return Err(PlanError::BadValue(key)),
            };
        }
        Ok(plan)
    }

    /// Flat JSON object (value or null per field), the same shape the model
    /// is asked to produce.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, Option<&str>> =
            self.entries.iter().map(|(k, v)| (k.as_str(), v.as_value())).collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }

    /// Field values as a scorer sees them: the planned string, or empty.
    pub fn observed(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.as_value().unwrap_or_default().to_string()))
            .collect()
    }

    pub fn value_count(&self) -> usize {
        self.entries.values().filter(|v| matches!(v, PlanValue::Value(_))).count()
    }

    pub fn blank_count(&self) -> usize {
        self.entries.len() - self.value_count()
    }

    /// Checks the plan only names fields of `schema`.
    pub fn validate(&self, schema: &FormSchema) -> Result<(), PlanError> {
        let names: BTreeSet<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
        match self.entries.keys().find(|k| !names.contains(k.as_str())) {
            Some(k) => Err(PlanError::UnknownField(k.clone())),
            None => Ok(()),
        }
    }
}

/// Prompt text sent to the model, tied to the schema it was built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub schema_digest: String,
}

fn describe_kind(kind: &FieldKind) -> String {
    match kind {
        FieldKind::Text { max_len: Some(n) } => format!("text, at most {n} characters"),
        FieldKind::Text { max_len: None } => "text".into(),
        FieldKind::Checkbox => "checkbox".into(),
        FieldKind::Choice { options } => {
            let opts: Vec<String> = options.iter().map(|o| json_quote(o)).collect();
            format!("choice, one of {}", opts.join(", "))
        }
    }
}

fn json_quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Assemble the prompt. Pure: identical inputs give byte-identical bundles.
pub fn build_prompt(instruction: &str, schema: &FormSchema, context: &str) -> Result<PromptBundle, PlanError> {
    if schema.fields.is_empty() {
        return Err(PlanError::EmptySchema);
    }
    let mut user = String::new();
    let _ = writeln!(user, "{SECTION_INSTRUCTION}");
    let _ = writeln!(user, "{}", instruction.trim_end());
    let _ = writeln!(user);
    let _ = writeln!(user, "{SECTION_CONTEXT}");
    if context.is_empty() {
        let _ = writeln!(user, "(no documents)");
    } else {
        let _ = writeln!(user, "{context}");
    }
    let _ = writeln!(user);
    let _ = writeln!(user, "{SECTION_FIELDS}");
    for field in &schema.fields {
        let _ = writeln!(user, "- {} ({})", json_quote(&field.name), describe_kind(&field.kind));
    }
    let _ = writeln!(user);
    let _ = writeln!(user, "{SECTION_OUTPUT}");
    let _ = write!(user, "{OUTPUT_DIRECTIVE}");
    Ok(PromptBundle { system_text: SYSTEM_TEXT.into(), user_text: user, schema_digest: schema.schema_digest() })
}

/// Field names listed in the field section of a prompt built by
/// [`build_prompt`], in order.
pub fn prompt_field_names(user_text: &str) -> Vec<String> {
    section(user_text, SECTION_FIELDS)
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("- ")?;
            let mut de = serde_json::Deserializer::from_str(rest).into_iter::<String>();
            de.next()?.ok()
        })
        .collect()
}

/// Body of a `[SECTION]` block, up to the next section header.
pub fn section<'a>(user_text: &'a str, header: &str) -> &'a str {
    let marker = format!("{header}\n");
    let Some(start) = user_text.find(&marker).map(|i| i + marker.len()) else {
        return "";
    };
    let rest = &user_text[start..];
    let end = [SECTION_INSTRUCTION, SECTION_CONTEXT, SECTION_FIELDS, SECTION_OUTPUT, SECTION_CORRECTION]
        .iter()
        .filter_map(|h| rest.find(&format!("\n{h}\n")))
        .min()
        .unwrap_or(rest.len());
    &rest[..end]
}

/// Raw model reply with the wall-clock time the call took.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPlan {
    pub text: String,
    pub elapsed_s: f64,
}

pub fn request_plan(bundle: &PromptBundle, backend: &dyn LlmBackend) -> Result<RawPlan, LlmError> {
    let start = Instant::now();
    let text = backend.complete(bundle)?;
    Ok(RawPlan { text, elapsed_s: start.elapsed().as_secs_f64() })
}

/// Parse a model reply into a total plan over `schema`.
pub fn parse_plan(raw: &str, schema: &FormSchema) -> Result<CompletionPlan, PlanParseError> {
    let map = json::first_object(raw).ok_or_else(|| PlanParseError {
        reason: if raw.trim().is_empty() { "empty reply".into() } else { "no balanced JSON object found".into() },
    })?;

    let mut plan = CompletionPlan::all_blank(schema);
    let mut seen = BTreeSet::new();
    for (key, value) in map {
        let name = normalize_name(&key);
        let Some(slot) = plan.entries.get_mut(&name) else {
            plan.warnings.push(format!("model returned unknown field {key:?}; ignored"));
            continue;
        };
        if !seen.insert(name.clone()) {
            plan.warnings.push(format!("model returned field {name:?} more than once; last value kept"));
        }
        *slot = match value {
            Value::Null => PlanValue::IntentionalBlank,
            Value::String(s) if s.trim().is_empty() => PlanValue::IntentionalBlank,
            Value::String(s) => PlanValue::Value(s),
            Value::Bool(true) => PlanValue::Value("true".into()),
            Value::Bool(false) => PlanValue::IntentionalBlank,
            Value::Number(n) => PlanValue::Value(n.to_string()),
            Value::Array(_) | Value::Object(_) => {
                plan.warnings.push(format!("model returned a non-scalar value for {name:?}; left blank"));
                PlanValue::IntentionalBlank
            }
        };
    }
    for field in &schema.fields {
        if !seen.contains(&field.name) {
            plan.warnings.push(format!("model did not answer field {:?}; left blank", field.name));
        }
    }
    Ok(plan)
}

const REPAIR_QUOTE_LIMIT: usize = 2000;

/// Follow-up prompt asking the model to answer again in the required format.
pub fn repair_request(bundle: &PromptBundle, raw: &str, error: &PlanParseError) -> PromptBundle {
    let quoted: String = raw.chars().take(REPAIR_QUOTE_LIMIT).collect();
    let mut user = bundle.user_text.clone();
    let _ = write!(
        user,
        "\n\n{SECTION_CORRECTION}\nYour previous reply could not be used ({}). Previous reply:\n<<<\n{}\n>>>\n\
         Reply again with only the JSON object described in {SECTION_OUTPUT}.",
        error.reason, quoted
    );
    PromptBundle { system_text: bundle.system_text.clone(), user_text: user, schema_digest: bundle.schema_digest.clone() }
}
