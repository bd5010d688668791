//! Small shared helpers: digests, atomic file writes and string normalization.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `path` by writing a sibling temp file and renaming it over
/// the destination. Readers see either the old or the new content, never a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Field-name normalization: trim, collapse internal whitespace to a single
/// space, NFC. Case is preserved.
pub fn normalize_name(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Value normalization used when comparing answers: trim, NFC, lowercase.
pub fn normalize_value(raw: &str) -> String {
    let nfc: String = raw.trim().nfc().collect();
    nfc.to_lowercase()
}

/// Truthy checkbox values: "1", "true", "yes", "x", "sí" (case-insensitive).
pub fn is_truthy(value: &str) -> bool {
    matches!(normalize_value(value).as_str(), "1" | "true" | "yes" | "x" | "sí")
}
