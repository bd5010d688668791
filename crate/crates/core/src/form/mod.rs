//! Interactive PDF forms: schema discovery, filling, read-back and synthetic
//! form generation.
//!
//! Field names are normalized (trimmed, internal whitespace collapsed, NFC)
//! but keep their case. Filled fields stay editable so a person can review
//! and correct the result.

mod acro;
mod fill;
mod generate;
mod text;

pub use fill::{fill_form, FilledForm};
pub use generate::{generate_test_form, generate_text_pdf, FieldSpec};

use std::collections::{BTreeMap, BTreeSet};

use lopdf::Document;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{normalize_name, sha256_hex};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum FormError {
    #[error("not a readable PDF: {0}")]
    NotPdf(String),
    #[error("duplicate field name {0:?} after normalization")]
    DuplicateName(String),
    #[error("plan names field {0:?} which is not in the form")]
    UnknownField(String),
    #[error("invalid form spec: {0}")]
    Spec(String),
    #[error("cannot write PDF: {0}")]
    Write(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FieldKind {
    Text {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_len: Option<u32>,
    },
    Checkbox,
    Choice {
        options: Vec<String>,
    },
}

impl FieldKind {
    pub fn label(&self) -> &'static str {
        match self {
            FieldKind::Text { .. } => "Text",
            FieldKind::Checkbox => "Checkbox",
            FieldKind::Choice { .. } => "Choice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormField {
    pub name: String,
    pub raw_name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
    /// 1-based page of the field's first widget.
    pub page: u32,
}

impl FormField {
    pub fn new(raw_name: &str, kind: FieldKind, page: u32) -> Self {
        Self { name: normalize_name(raw_name), raw_name: raw_name.to_string(), kind, page }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormSchema {
    /// SHA-256 of the PDF the schema was read from.
    pub form_digest: String,
    pub fields: Vec<FormField>,
}

impl FormSchema {
    /// Digest of the field structure (names and kinds, in order). Unlike
    /// `form_digest` it is unchanged by filling.
    pub fn schema_digest(&self) -> String {
        let shape: Vec<(&str, &FieldKind)> = self.fields.iter().map(|f| (f.name.as_str(), &f.kind)).collect();
        sha256_hex(&serde_json::to_vec(&shape).expect("schema serializes"))
    }

    pub fn field(&self, name: &str) -> Option<&FormField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

pub(crate) fn load(pdf: &[u8]) -> Result<Document, FormError> {
    if !pdf.starts_with(b"%PDF-") {
        return Err(FormError::NotPdf("missing %PDF header".into()));
    }
    Document::load_mem(pdf).map_err(|e| FormError::NotPdf(e.to_string()))
}

fn schema_of(doc: &Document, form_digest: String) -> Result<(FormSchema, Vec<acro::FieldNode>), FormError> {
    let nodes = acro::collect_fields(doc);
    let mut seen = BTreeSet::new();
    let mut fields = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let field = FormField::new(&node.full_name, node.kind.clone(), node.page);
        if !seen.insert(field.name.clone()) {
            return Err(FormError::DuplicateName(field.name));
        }
        fields.push(field);
    }
    Ok((FormSchema { form_digest, fields }, nodes))
}

/// Interactive field schema of `pdf`, in document order. A PDF without
/// interactive fields yields an empty schema.
pub fn read_schema(pdf: &[u8]) -> Result<FormSchema, FormError> {
    let doc = load(pdf)?;
    schema_of(&doc, sha256_hex(pdf)).map(|(schema, _)| schema)
}

/// True when `pdf` parses and has at least one interactive field.
pub fn has_form_fields(pdf: &[u8]) -> bool {
    load(pdf).map(|doc| !acro::collect_fields(&doc).is_empty()).unwrap_or(false)
}

/// Current field values. Checkboxes read `"true"` when ticked, `""`
/// otherwise; unset fields read `""`.
pub fn read_back(pdf: &[u8]) -> Result<BTreeMap<String, String>, FormError> {
    let doc = load(pdf)?;
    let (schema, nodes) = schema_of(&doc, String::new())?;
    Ok(schema
        .fields
        .iter()
        .zip(&nodes)
        .map(|(field, node)| (field.name.clone(), acro::current_value(&doc, node)))
        .collect())
}

/// Lines of the embedded text layer, empty when the PDF has no text.
pub fn pdf_text_lines(pdf: &[u8]) -> Result<Vec<String>, FormError> {
    let doc = load(pdf)?;
    let pages: Vec<u32> = doc.get_pages().keys().copied().collect();
    if pages.is_empty() {
        return Ok(Vec::new());
    }
    let text = doc.extract_text(&pages).map_err(|e| FormError::NotPdf(e.to_string()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}
