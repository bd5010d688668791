use std::collections::BTreeMap;

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, ObjectId, Stream};
use serde::{Deserialize, Serialize};

use super::acro::{self, FieldNode};
use super::text::winansi_bytes;
use super::{load, schema_of, FieldKind, FormError};
use crate::plan::{CompletionPlan, PlanValue};
use crate::util::{is_truthy, normalize_value};

const FONT_SIZE: f64 = 10.0;

/// Result of filling a form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledForm {
    #[serde(skip)]
    pub bytes: Vec<u8>,
    /// Field name → value as written. Checkboxes record `"true"` or `""`.
    pub applied: BTreeMap<String, String>,
    /// Field name → why the planned value was not written.
    pub skipped: BTreeMap<String, String>,
    /// Field name → remark about an applied value, such as truncation.
    pub notes: BTreeMap<String, String>,
}

/// Write the plan's values into `pdf`. Intentional blanks leave their fields
/// untouched; fields stay editable.
pub fn fill_form(pdf: &[u8], plan: &CompletionPlan) -> Result<FilledForm, FormError> {
    let mut doc = load(pdf)?;
    let (schema, nodes) = schema_of(&doc, String::new())?;
    if let Some(unknown) = plan.entries.keys().find(|k| schema.field(k).is_none()) {
        return Err(FormError::UnknownField(unknown.clone()));
    }

    let mut out = FilledForm { bytes: Vec::new(), applied: BTreeMap::new(), skipped: BTreeMap::new(), notes: BTreeMap::new() };
    let mut font: Option<ObjectId> = None;

    for (field, node) in schema.fields.iter().zip(&nodes) {
        let Some(PlanValue::Value(value)) = plan.entries.get(&field.name) else { continue };
        match &field.kind {
            FieldKind::Text { max_len } => {
                let mut text = value.clone();
                if let Some(limit) = max_len {
                    let count = text.chars().count();
                    if count > *limit as usize {
                        text = text.chars().take(*limit as usize).collect();
                        out.notes.insert(
                            field.name.clone(),
                            format!("value truncated from {count} to {limit} characters"),
                        );
                    }
                }
                set_value(&mut doc, node.id, lopdf::text_string(&text))?;
                let font_id = *font.get_or_insert_with(|| helv_font(&mut doc));
                write_text_appearance(&mut doc, node, &text, font_id)?;
                out.applied.insert(field.name.clone(), text);
            }
            FieldKind::Checkbox => {
                let checked = is_truthy(value);
                let on = acro::on_states(&doc, &node.widgets).into_iter().next().unwrap_or_else(|| "Yes".into());
                let state = if checked { on } else { "Off".to_string() };
                set_value(&mut doc, node.id, Object::Name(state.clone().into_bytes()))?;
                for w in &node.widgets {
                    set_key(&mut doc, *w, b"AS", Object::Name(state.clone().into_bytes()))?;
                }
                out.applied.insert(field.name.clone(), if checked { "true".into() } else { String::new() });
            }
            FieldKind::Choice { options } => {
                let wanted = normalize_value(value);
                let Some(option) = options.iter().find(|o| normalize_value(o) == wanted) else {
                    out.skipped.insert(
                        field.name.clone(),
                        format!("{value:?} is not one of the options {}", options.join(" / ")),
                    );
                    continue;
                };
                if node.radio {
                    set_value(&mut doc, node.id, Object::Name(option.clone().into_bytes()))?;
                    for w in &node.widgets {
                        let has_state = acro::on_states(&doc, &[*w]).contains(option);
                        let state = if has_state { option.as_str() } else { "Off" };
                        set_key(&mut doc, *w, b"AS", Object::Name(state.as_bytes().to_vec()))?;
                    }
                } else {
                    set_value(&mut doc, node.id, lopdf::text_string(option))?;
                    let font_id = *font.get_or_insert_with(|| helv_font(&mut doc));
                    write_text_appearance(&mut doc, node, option, font_id)?;
                }
                out.applied.insert(field.name.clone(), option.clone());
            }
        }
    }

    if !out.applied.is_empty() {
        set_need_appearances(&mut doc)?;
    }
    doc.save_to(&mut out.bytes).map_err(|e| FormError::Write(e.to_string()))?;
    Ok(out)
}

fn set_key(doc: &mut Document, id: ObjectId, key: &[u8], value: Object) -> Result<(), FormError> {
    doc.get_dictionary_mut(id)
        .map_err(|e| FormError::Write(format!("object {id:?}: {e}")))?
        .set(key.to_vec(), value);
    Ok(())
}

fn set_value(doc: &mut Document, id: ObjectId, value: Object) -> Result<(), FormError> {
    set_key(doc, id, b"V", value)
}

fn set_need_appearances(doc: &mut Document) -> Result<(), FormError> {
    let catalog = doc.catalog().map_err(|e| FormError::Write(e.to_string()))?;
    match catalog.get(b"AcroForm") {
        Ok(Object::Reference(id)) => {
            let id = *id;
            set_key(doc, id, b"NeedAppearances", Object::Boolean(true))
        }
        Ok(Object::Dictionary(_)) => {
            let catalog = doc.catalog_mut().map_err(|e| FormError::Write(e.to_string()))?;
            if let Ok(Object::Dictionary(form)) = catalog.get_mut(b"AcroForm") {
                form.set("NeedAppearances", true);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// The form's default Helvetica resource, or a new Helvetica font object.
fn helv_font(doc: &mut Document) -> ObjectId {
    let existing = acro::acroform(doc)
        .and_then(|form| form.get(b"DR").ok())
        .and_then(|dr| acro::resolve_dict(doc, dr))
        .and_then(|dr| dr.get(b"Font").ok())
        .and_then(|fonts| acro::resolve_dict(doc, fonts))
        .and_then(|fonts| fonts.get(b"Helv").ok())
        .and_then(|f| f.as_reference().ok());
    existing.unwrap_or_else(|| {
        doc.add_object(dictionary! {
            "Type" => "Font",
            "Subtype" => "Type1",
            "BaseFont" => "Helvetica",
            "Encoding" => "WinAnsiEncoding",
        })
    })
}

fn rect_size(doc: &Document, widget: ObjectId) -> Option<(f64, f64)> {
    let dict = doc.get_dictionary(widget).ok()?;
    let rect = dict.get(b"Rect").ok().and_then(|r| acro::resolve(doc, r))?.as_array().ok()?;
    let n: Vec<f64> = rect.iter().filter_map(|v| v.as_float().ok().map(f64::from)).collect();
    (n.len() == 4).then(|| ((n[2] - n[0]).abs(), (n[3] - n[1]).abs()))
}

/// Single-line appearance for text and combo widgets. Values outside WinAnsi
/// get no appearance stream; viewers rebuild it from `/NeedAppearances`.
fn write_text_appearance(doc: &mut Document, node: &FieldNode, text: &str, font: ObjectId) -> Result<(), FormError> {
    let encoded = winansi_bytes(text);
    for widget in &node.widgets {
        let Some((w, h)) = rect_size(doc, *widget) else { continue };
        let Some(bytes) = &encoded else {
            doc.get_dictionary_mut(*widget).map_err(|e| FormError::Write(e.to_string()))?.remove(b"AP");
            continue;
        };
        let baseline = ((h - FONT_SIZE) / 2.0 + 2.0).max(1.0);
        let ops = vec![
            Operation::new("BMC", vec!["Tx".into()]),
            Operation::new("q", vec![]),
            Operation::new("BT", vec![]),
            Operation::new("Tf", vec!["Helv".into(), (FONT_SIZE as f32).into()]),
            Operation::new("g", vec![0.into()]),
            Operation::new("Td", vec![2.into(), (baseline as f32).into()]),
            Operation::new("Tj", vec![Object::String(bytes.clone(), lopdf::StringFormat::Literal)]),
            Operation::new("ET", vec![]),
            Operation::new("Q", vec![]),
            Operation::new("EMC", vec![]),
        ];
        let content = Content { operations: ops }.encode().map_err(|e| FormError::Write(e.to_string()))?;
        let stream = Stream::new(
            dictionary! {
                "Type" => "XObject",
                "Subtype" => "Form",
                "BBox" => vec![0.into(), 0.into(), Object::Real(w as f32), Object::Real(h as f32)],
                "Resources" => dictionary! { "Font" => dictionary! { "Helv" => font } },
            },
            content,
        );
        let ap = doc.add_object(stream);
        set_key(doc, *widget, b"AP", Object::Dictionary(dictionary! { "N" => ap }))?;
    }
    Ok(())
}
