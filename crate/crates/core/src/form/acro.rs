//! Walks the AcroForm field tree.

use std::collections::{HashMap, HashSet};

use lopdf::{Dictionary, Document, Object, ObjectId};

use super::text::object_text;
use super::FieldKind;

pub(crate) const FF_RADIO: i64 = 1 << 15;
pub(crate) const FF_PUSHBUTTON: i64 = 1 << 16;
pub(crate) const FF_COMBO: i64 = 1 << 17;

/// A terminal field: the dictionary holding its value plus its widgets.
#[derive(Debug, Clone)]
pub(crate) struct FieldNode {
    pub full_name: String,
    pub id: ObjectId,
    pub widgets: Vec<ObjectId>,
    pub kind: FieldKind,
    pub radio: bool,
    pub page: u32,
}

#[derive(Clone, Default)]
struct Inherited {
    ft: Option<Vec<u8>>,
    ff: i64,
    max_len: Option<i64>,
}

pub(crate) fn resolve<'a>(doc: &'a Document, obj: &'a Object) -> Option<&'a Object> {
    doc.dereference(obj).ok().map(|(_, o)| o)
}

pub(crate) fn resolve_dict<'a>(doc: &'a Document, obj: &'a Object) -> Option<&'a Dictionary> {
    resolve(doc, obj).and_then(|o| o.as_dict().ok())
}

fn dict_get<'a>(doc: &'a Document, dict: &'a Dictionary, key: &[u8]) -> Option<&'a Object> {
    dict.get(key).ok().and_then(|o| resolve(doc, o))
}

/// The AcroForm dictionary, if the catalog has one.
pub(crate) fn acroform(doc: &Document) -> Option<&Dictionary> {
    let catalog = doc.catalog().ok()?;
    dict_get(doc, catalog, b"AcroForm")?.as_dict().ok()
}

fn widget_pages(doc: &Document) -> HashMap<ObjectId, u32> {
    let mut map = HashMap::new();
    for (number, page_id) in doc.get_pages() {
        let Ok(page) = doc.get_dictionary(page_id) else { continue };
        let Some(Object::Array(annots)) = dict_get(doc, page, b"Annots") else { continue };
        for annot in annots {
            if let Ok(id) = annot.as_reference() {
                map.entry(id).or_insert(number);
            }
        }
    }
    map
}

/// Terminal fields in document order. Push buttons, signatures and fields
/// without a name are not data fields and are left out.
pub(crate) fn collect_fields(doc: &Document) -> Vec<FieldNode> {
    let Some(form) = acroform(doc) else { return Vec::new() };
    let Some(Object::Array(roots)) = dict_get(doc, form, b"Fields") else { return Vec::new() };
    let pages = widget_pages(doc);
    let mut out = Vec::new();
    let mut visited = HashSet::new();
    for root in roots {
        if let Ok(id) = root.as_reference() {
            walk(doc, id, &Inherited::default(), "", &pages, &mut visited, &mut out);
        }
    }
    out
}

fn walk(
    doc: &Document,
    id: ObjectId,
    parent: &Inherited,
    prefix: &str,
    pages: &HashMap<ObjectId, u32>,
    visited: &mut HashSet<ObjectId>,
    out: &mut Vec<FieldNode>,
) {
    if !visited.insert(id) {
        return;
    }
    let Ok(dict) = doc.get_dictionary(id) else { return };

    let mut inherited = parent.clone();
    if let Some(Object::Name(ft)) = dict_get(doc, dict, b"FT") {
        inherited.ft = Some(ft.clone());
    }
    if let Some(ff) = dict_get(doc, dict, b"Ff").and_then(|o| o.as_i64().ok()) {
        inherited.ff = ff;
    }
    if let Some(n) = dict_get(doc, dict, b"MaxLen").and_then(|o| o.as_i64().ok()) {
        inherited.max_len = Some(n);
    }

    let partial = dict_get(doc, dict, b"T").and_then(object_text);
    let full_name = match (&partial, prefix.is_empty()) {
        (Some(p), true) => p.clone(),
        (Some(p), false) => format!("{prefix}.{p}"),
        (None, _) => prefix.to_string(),
    };

    let kids: Vec<ObjectId> = match dict_get(doc, dict, b"Kids") {
        Some(Object::Array(kids)) => kids.iter().filter_map(|k| k.as_reference().ok()).collect(),
        _ => Vec::new(),
    };
    let field_kids: Vec<ObjectId> = kids
        .iter()
        .copied()
        .filter(|k| doc.get_dictionary(*k).map(|d| d.has(b"T")).unwrap_or(false))
        .collect();
    if !field_kids.is_empty() {
        for kid in field_kids {
            walk(doc, kid, &inherited, &full_name, pages, visited, out);
        }
        return;
    }

    if full_name.is_empty() {
        return;
    }
    let widgets = if kids.is_empty() { vec![id] } else { kids };
    let page = widgets
        .iter()
        .find_map(|w| pages.get(w).copied())
        .or_else(|| pages.get(&id).copied())
        .unwrap_or(1);

    let radio = inherited.ff & FF_RADIO != 0;
    let kind = match inherited.ft.as_deref() {
        Some(b"Tx") => {
            Some(FieldKind::Text { max_len: inherited.max_len.filter(|n| *n > 0).map(|n| n as u32) })
        }
        Some(b"Btn") if inherited.ff & FF_PUSHBUTTON != 0 => None,
        Some(b"Btn") if radio => {
            let options = on_states(doc, &widgets);
            (!options.is_empty()).then_some(FieldKind::Choice { options })
        }
        Some(b"Btn") => Some(FieldKind::Checkbox),
        Some(b"Ch") => {
            let options = choice_options(doc, dict);
            // a choice field without options only accepts free text
            Some(if options.is_empty() { FieldKind::Text { max_len: None } } else { FieldKind::Choice { options } })
        }
        _ => None,
    };
    if let Some(kind) = kind {
        out.push(FieldNode { full_name, id, widgets, kind, radio, page });
    }
}

/// Appearance state names other than `Off`, across `widgets`, deduplicated.
pub(crate) fn on_states(doc: &Document, widgets: &[ObjectId]) -> Vec<String> {
    let mut states: Vec<String> = Vec::new();
    for w in widgets {
        let Ok(widget) = doc.get_dictionary(*w) else { continue };
        let Some(ap) = dict_get(doc, widget, b"AP").and_then(|o| o.as_dict().ok()) else { continue };
        let Some(normal) = dict_get(doc, ap, b"N").and_then(|o| o.as_dict().ok()) else { continue };
        for (key, _) in normal.iter() {
            let name = String::from_utf8_lossy(key).into_owned();
            if name != "Off" && !states.contains(&name) {
                states.push(name);
            }
        }
    }
    states
}

fn choice_options(doc: &Document, dict: &Dictionary) -> Vec<String> {
    let Some(Object::Array(opts)) = dict_get(doc, dict, b"Opt") else { return Vec::new() };
    opts.iter()
        .filter_map(|o| match resolve(doc, o)? {
            // [export value, display text]: the export value is what /V holds
            Object::Array(pair) => pair.first().and_then(|e| resolve(doc, e)).and_then(object_text),
            other => object_text(other),
        })
        .collect()
}

/// `/V` of the field, looked up through `/Parent` when inherited.
pub(crate) fn field_value(doc: &Document, id: ObjectId) -> Option<&Object> {
    let mut current = doc.get_dictionary(id).ok();
    let mut depth = 0;
    while let Some(dict) = current {
        if let Some(v) = dict_get(doc, dict, b"V") {
            return Some(v);
        }
        depth += 1;
        if depth > 32 {
            break;
        }
        current = dict_get(doc, dict, b"Parent").and_then(|p| p.as_dict().ok());
    }
    None
}

pub(crate) fn current_value(doc: &Document, node: &FieldNode) -> String {
    let value = field_value(doc, node.id);
    match &node.kind {
        FieldKind::Checkbox => {
            let state = value.and_then(|v| v.as_name().ok()).map(<[u8]>::to_vec).or_else(|| {
                let widget = doc.get_dictionary(*node.widgets.first()?).ok()?;
                dict_get(doc, widget, b"AS")?.as_name().ok().map(<[u8]>::to_vec)
            });
            match state {
                Some(s) if !s.is_empty() && s != b"Off" => "true".into(),
                _ => String::new(),
            }
        }
        _ => match value {
            Some(Object::Name(n)) if n == b"Off" => String::new(),
            Some(Object::Array(items)) => items.first().and_then(|o| resolve(doc, o)).and_then(object_text).unwrap_or_default(),
            Some(v) => object_text(v).unwrap_or_default(),
            None => String::new(),
        },
    }
}
