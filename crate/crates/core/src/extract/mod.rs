//! Text recovery from context attachments and assembly of the planner context.

mod backend;

pub use backend::{OcrBackend, RemoteOcr, RemoteOcrConfig, StubOcr};

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::form;
use crate::ingest::{Attachment, AttachmentKind, MediaType};

/// Height of a reading-order row band, in normalized page units.
pub const ROW_BAND: f64 = 0.02;

/// Default minimum block confidence kept for the planner.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

pub const PDF_TEXT_BACKEND: &str = "pdf-text";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x) && unit(self.y) && unit(self.w) && unit(self.h) && self.w > 0.0 && self.h > 0.0
    }

    /// Full-width row `index` of `count` equal rows.
    pub fn row(index: usize, count: usize) -> Self {
        let h = 1.0 / count.max(1) as f64;
        Self { x: 0.0, y: index as f64 * h, w: 1.0, h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBlock {
    pub text: String,
    pub confidence: f64,
    pub bbox: BBox,
}

impl TextBlock {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.confidence) && self.bbox.is_valid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedDocument {
    pub source_filename: String,
    pub blocks: Vec<TextBlock>,
    pub backend_name: String,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExtractError {
    #[error("OCR backend unreachable: {0}")]
    Unreachable(String),
    #[error("OCR backend returned a malformed response: {reason}")]
    Malformed { reason: String, raw: String },
    #[error("attachment {filename:?} is not an extractable context document")]
    NotContext { filename: String },
    #[error("cannot read PDF text layer: {0}")]
    Pdf(String),
}

impl ExtractError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExtractError::Unreachable(_))
    }
}

/// Sort top-to-bottom by row band, then left-to-right.
pub fn sort_reading_order(blocks: &mut [TextBlock]) {
    blocks.sort_by(|a, b| {
        let band = |t: &TextBlock| (t.bbox.y / ROW_BAND).floor() as i64;
        band(a).cmp(&band(b)).then(a.bbox.x.total_cmp(&b.bbox.x))
    });
}

fn text_rows(lines: Vec<String>) -> Vec<TextBlock> {
    let n = lines.len();
    lines
        .into_iter()
        .enumerate()
        .map(|(i, text)| TextBlock { text, confidence: 1.0, bbox: BBox::row(i, n) })
        .collect()
}

/// Recover the text of one context attachment.
///
/// PDFs carrying a text layer are read directly at confidence 1.0; images and
/// PDFs without text go through `backend`.
pub fn extract_text(attachment: &Attachment, backend: &dyn OcrBackend) -> Result<ExtractedDocument, ExtractError> {
    if attachment.kind != AttachmentKind::ContextDocument || !attachment.media_type.is_accepted() {
        return Err(ExtractError::NotContext { filename: attachment.filename.clone() });
    }
    let start = Instant::now();
    if attachment.media_type == MediaType::Pdf {
        let lines = form::pdf_text_lines(&attachment.bytes).map_err(|e| ExtractError::Pdf(e.to_string()))?;
        if !lines.is_empty() {
            return Ok(ExtractedDocument {
                source_filename: attachment.filename.clone(),
                blocks: text_rows(lines),
                backend_name: PDF_TEXT_BACKEND.into(),
                elapsed_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    let mut blocks = backend.detect(&attachment.bytes, attachment.media_type.as_str())?;
    if let Some(bad) = blocks.iter().find(|b| !b.is_valid()) {
        return Err(ExtractError::Malformed {
            reason: "block confidence or bounding box out of range".into(),
            raw: serde_json::to_string(bad).unwrap_or_default(),
        });
    }
    sort_reading_order(&mut blocks);
    Ok(ExtractedDocument {
        source_filename: attachment.filename.clone(),
        blocks,
        backend_name: backend.name().to_string(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Keep blocks with confidence at or above `min_confidence`, preserving order.
pub fn filter_blocks(doc: &ExtractedDocument, min_confidence: f64) -> ExtractedDocument {
    ExtractedDocument {
        blocks: doc.blocks.iter().filter(|b| b.confidence >= min_confidence).cloned().collect(),
        ..doc.clone()
    }
}

/// Planner context: one `=== DOCUMENT: <filename> ===` section per document,
/// block texts on their own lines, sections separated by a blank line.
pub fn render_context(docs: &[ExtractedDocument]) -> String {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "=== DOCUMENT: {} ===", doc.source_filename);
        for block in &doc.blocks {
            out.push('\n');
            out.push_str(&block.text);
        }
    }
    out
}
