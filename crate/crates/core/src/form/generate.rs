//! Synthetic PDFs for tests and demos: fillable forms and flat text pages.

use std::collections::BTreeSet;

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, ObjectId, Stream, StringFormat};
use serde::{Deserialize, Serialize};

use super::acro::FF_COMBO;
use super::text::winansi_lossy;
use super::{FieldKind, FormError};
use crate::util::normalize_name;

const PAGE_W: f32 = 595.0;
const PAGE_H: f32 = 842.0;
const FIELDS_PER_PAGE: usize = 24;
const LINES_PER_PAGE: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn new(name: &str, kind: FieldKind) -> Self {
        Self { name: name.to_string(), kind }
    }
}

fn validate(fields: &[FieldSpec]) -> Result<(), FormError> {
    if fields.is_empty() {
        return Err(FormError::Spec("at least one field is required".into()));
    }
    let mut seen = BTreeSet::new();
    for f in fields {
        let name = normalize_name(&f.name);
        if name.is_empty() {
            return Err(FormError::Spec("field names must not be blank".into()));
        }
        if name.contains('.') {
            return Err(FormError::Spec(format!("field name {name:?} contains '.'")));
        }
        if !seen.insert(name.clone()) {
            return Err(FormError::DuplicateName(name));
        }
        if let FieldKind::Choice { options } = &f.kind {
            if options.is_empty() || options.iter().any(|o| o.trim().is_empty()) {
                return Err(FormError::Spec(format!("choice field {name:?} needs non-blank options")));
            }
        }
    }
    Ok(())
}

fn helvetica(doc: &mut Document) -> ObjectId {
    doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Helvetica",
        "Encoding" => "WinAnsiEncoding",
    })
}

fn literal(bytes: Vec<u8>) -> Object {
    Object::String(bytes, StringFormat::Literal)
}

fn text_ops(ops: &mut Vec<Operation>, size: f32, x: f32, y: f32, text: &str) {
    ops.push(Operation::new("BT", vec![]));
    ops.push(Operation::new("Tf", vec!["F1".into(), size.into()]));
    ops.push(Operation::new("Td", vec![x.into(), y.into()]));
    ops.push(Operation::new("Tj", vec![literal(winansi_lossy(text))]));
    ops.push(Operation::new("ET", vec![]));
}

fn content_stream(ops: Vec<Operation>) -> Result<Stream, FormError> {
    let bytes = Content { operations: ops }.encode().map_err(|e| FormError::Write(e.to_string()))?;
    Ok(Stream::new(dictionary! {}, bytes))
}

fn save(mut doc: Document) -> Result<Vec<u8>, FormError> {
    let mut out = Vec::new();
    doc.save_to(&mut out).map_err(|e| FormError::Write(e.to_string()))?;
    Ok(out)
}

fn checkbox_appearances(doc: &mut Document, font: ObjectId) -> (ObjectId, ObjectId) {
    let bbox = || vec![0.into(), 0.into(), 14.into(), 14.into()];
    let on = doc.add_object(Stream::new(
        dictionary! {
            "Type" => "XObject", "Subtype" => "Form", "BBox" => bbox(),
            "Resources" => dictionary! { "Font" => dictionary! { "Helv" => font } },
        },
        b"q 0 g 0.5 w 1 1 12 12 re S BT /Helv 11 Tf 3 3 Td (X) Tj ET Q".to_vec(),
    ));
    let off = doc.add_object(Stream::new(
        dictionary! { "Type" => "XObject", "Subtype" => "Form", "BBox" => bbox() },
        b"q 0 g 0.5 w 1 1 12 12 re S Q".to_vec(),
    ));
    (on, off)
}

/// A fillable A4 form with one labelled widget per field, in order,
/// `24` fields per page. Field values all start empty.
pub fn generate_test_form(fields: &[FieldSpec]) -> Result<Vec<u8>, FormError> {
    validate(fields)?;
    let mut doc = Document::with_version("1.7");
    let pages_id = doc.new_object_id();
    let font = helvetica(&mut doc);
    let (yes_ap, off_ap) = checkbox_appearances(&mut doc, font);

    let mut page_ids = Vec::new();
    let mut field_ids = Vec::new();
    for chunk in fields.chunks(FIELDS_PER_PAGE) {
        let page_id = doc.new_object_id();
        let mut ops = Vec::new();
        let mut annots = Vec::new();
        for (i, spec) in chunk.iter().enumerate() {
            let name = normalize_name(&spec.name);
            let y = PAGE_H - 70.0 - 30.0 * i as f32;
            text_ops(&mut ops, 10.0, 50.0, y + 4.0, &name);
            let mut widget = dictionary! {
                "Type" => "Annot",
                "Subtype" => "Widget",
                "T" => lopdf::text_string(&name),
                "P" => page_id,
                "F" => 4,
            };
            match &spec.kind {
                FieldKind::Text { max_len } => {
                    widget.set("FT", "Tx");
                    widget.set("DA", literal(b"/Helv 10 Tf 0 g".to_vec()));
                    widget.set("Rect", vec![250.into(), y.into(), 545.into(), (y + 18.0).into()]);
                    if let Some(n) = max_len {
                        widget.set("MaxLen", i64::from(*n));
                    }
                }
                FieldKind::Checkbox => {
                    widget.set("FT", "Btn");
                    widget.set("Rect", vec![250.into(), y.into(), 264.into(), (y + 14.0).into()]);
                    widget.set("AS", "Off");
                    widget.set("AP", dictionary! { "N" => dictionary! { "Yes" => yes_ap, "Off" => off_ap } });
                }
                FieldKind::Choice { options } => {
                    widget.set("FT", "Ch");
                    widget.set("Ff", FF_COMBO);
                    widget.set("DA", literal(b"/Helv 10 Tf 0 g".to_vec()));
                    widget.set("Rect", vec![250.into(), y.into(), 545.into(), (y + 18.0).into()]);
                    widget.set("Opt", options.iter().map(|o| lopdf::text_string(o)).collect::<Vec<Object>>());
                }
            }
            let id = doc.add_object(widget);
            annots.push(Object::Reference(id));
            field_ids.push(Object::Reference(id));
        }
        let contents = doc.add_object(content_stream(ops)?);
        doc.objects.insert(
            page_id,
            Object::Dictionary(dictionary! {
                "Type" => "Page",
                "Parent" => pages_id,
                "MediaBox" => vec![0.into(), 0.into(), PAGE_W.into(), PAGE_H.into()],
                "Resources" => dictionary! { "Font" => dictionary! { "F1" => font } },
                "Contents" => contents,
                "Annots" => annots,
            }),
        );
        page_ids.push(Object::Reference(page_id));
    }

    let count = page_ids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! { "Type" => "Pages", "Kids" => page_ids, "Count" => count }),
    );
    let acroform = doc.add_object(dictionary! {
        "Fields" => field_ids,
        "DA" => literal(b"/Helv 0 Tf 0 g".to_vec()),
        "DR" => dictionary! { "Font" => dictionary! { "Helv" => font } },
        "NeedAppearances" => true,
    });
    let catalog = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id, "AcroForm" => acroform });
    doc.trailer.set("Root", catalog);
    save(doc)
}

/// A flat PDF (no form fields) with one text line per entry. Characters
/// outside WinAnsi are replaced with `?`.
pub fn generate_text_pdf(lines: &[&str]) -> Vec<u8> {
    let mut doc = Document::with_version("1.7");
    let pages_id = doc.new_object_id();
    let font = helvetica(&mut doc);
    let mut page_ids = Vec::new();
    let chunks: Vec<&[&str]> = if lines.is_empty() { vec![&[]] } else { lines.chunks(LINES_PER_PAGE).collect() };
    for chunk in chunks {
        let mut ops = Vec::new();
        for (i, line) in chunk.iter().enumerate() {
            text_ops(&mut ops, 11.0, 50.0, PAGE_H - 60.0 - 14.0 * i as f32, line);
        }
        let contents = doc.add_object(content_stream(ops).expect("text operations encode"));
        let page = doc.add_object(dictionary! {
            "Type" => "Page",
            "Parent" => pages_id,
            "MediaBox" => vec![0.into(), 0.into(), PAGE_W.into(), PAGE_H.into()],
            "Resources" => dictionary! { "Font" => dictionary! { "F1" => font } },
            "Contents" => contents,
        });
        page_ids.push(Object::Reference(page));
    }
    let count = page_ids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! { "Type" => "Pages", "Kids" => page_ids, "Count" => count }),
    );
    let catalog = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id });
    doc.trailer.set("Root", catalog);
    save(doc).expect("in-memory PDF writes")
}
