//! PDF string helpers.

use lopdf::Object;

/// Text string or name object as a Rust string.
pub fn object_text(obj: &Object) -> Option<String> {
    match obj {
        Object::String(bytes, _) => {
            Some(lopdf::decode_text_string(obj).unwrap_or_else(|_| String::from_utf8_lossy(bytes).into_owned()))
        }
        Object::Name(name) => Some(String::from_utf8_lossy(name).into_owned()),
        _ => None,
    }
}

/// WinAnsi bytes for `s`, or `None` if a character has no single-byte form.
/// Only printable ASCII and the Latin-1 range are mapped; that covers
/// Spanish text.
pub fn winansi_bytes(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| {
            let cp = c as u32;
            ((0x20..0x7F).contains(&cp) || (0xA0..=0xFF).contains(&cp)).then_some(cp as u8)
        })
        .collect()
}

/// Like [`winansi_bytes`] but substitutes `?` for unmappable characters.
pub fn winansi_lossy(s: &str) -> Vec<u8> {
    s.chars().map(|c| winansi_bytes(c.encode_utf8(&mut [0; 4])).map_or(b'?', |b| b[0])).collect()
}
