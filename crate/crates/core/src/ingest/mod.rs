//! Inbound mail: polling a maildir-style inbox, parsing RFC 5322/MIME messages
//! into requests and classifying their attachments.

mod html;
mod inbox;

pub use html::strip_html;
pub use inbox::{poll_inbox, Cursor, MailboxSource, Maildir, PollOutcome, RawMessage};

use std::fmt;

use chrono::{DateTime, TimeZone, Utc};
use mailparse::{DispositionType, MailHeaderMap, ParsedMail};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::form;
use crate::util::sha256_hex;

pub const SYNTHETIC_ID_DOMAIN: &str = "mailform.invalid";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("inbox unreachable: {0}")]
    Unreachable(String),
    #[error("not a MIME message: {0}")]
    Parse(String),
    #[error("cursor file {path}: {source}")]
    Cursor { path: String, source: std::io::Error },
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Unreachable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum MediaType {
    Pdf,
    Png,
    Jpeg,
    Tiff,
    Other(String),
}

impl MediaType {
    /// Resolve a declared content type, falling back to the filename
    /// extension for generic types such as `application/octet-stream`.
    pub fn resolve(content_type: &str, filename: &str) -> Self {
        let declared = Self::from(content_type.to_string());
        if !matches!(declared, MediaType::Other(_)) {
            return declared;
        }
        let ext = filename.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).unwrap_or_default();
        match (declared, ext.as_str()) {
            (MediaType::Other(ct), _) if ct != "application/octet-stream" => MediaType::Other(ct),
            (_, "pdf") => MediaType::Pdf,
            (_, "png") => MediaType::Png,
            (_, "jpg" | "jpeg") => MediaType::Jpeg,
            (_, "tif" | "tiff") => MediaType::Tiff,
            (other, _) => other,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            MediaType::Pdf => "application/pdf",
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
            MediaType::Tiff => "image/tiff",
            MediaType::Other(s) => s,
        }
    }

    pub fn is_accepted(&self) -> bool {
        !matches!(self, MediaType::Other(_))
    }
}

impl From<String> for MediaType {
    fn from(s: String) -> Self {
        let essence = s.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
        match essence.as_str() {
            "application/pdf" | "application/x-pdf" => MediaType::Pdf,
            "image/png" => MediaType::Png,
            "image/jpeg" | "image/jpg" | "image/pjpeg" => MediaType::Jpeg,
            "image/tiff" | "image/tif" => MediaType::Tiff,
            _ => MediaType::Other(essence),
        }
    }
}

impl From<MediaType> for String {
    fn from(m: MediaType) -> Self {
        m.as_str().to_string()
    }
}

impl fmt::Display for MediaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttachmentKind {
    TargetForm,
    ContextDocument,
    Ignored,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Attachment {
    pub filename: String,
    pub media_type: MediaType,
    pub bytes: Vec<u8>,
    pub kind: AttachmentKind,
}

impl Attachment {
    pub fn digest(&self) -> String {
        sha256_hex(&self.bytes)
    }
}

impl fmt::Debug for Attachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Attachment")
            .field("filename", &self.filename)
            .field("media_type", &self.media_type)
            .field("bytes", &format_args!("{} bytes", self.bytes.len()))
            .field("kind", &self.kind)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundRequest {
    pub message_id: String,
    /// The message had no Message-ID; `message_id` was derived from its bytes.
    pub message_id_synthesized: bool,
    pub sender: String,
    pub subject: String,
    pub instruction_text: String,
    pub attachments: Vec<Attachment>,
    pub received_at: DateTime<Utc>,
    pub warnings: Vec<String>,
    /// Set by [`classify_attachments`] when no attachment is a fillable PDF.
    pub no_target_form: bool,
}

impl InboundRequest {
    /// First fillable PDF in MIME order.
    pub fn target_form(&self) -> Option<&Attachment> {
        self.attachments.iter().find(|a| a.kind == AttachmentKind::TargetForm)
    }

    pub fn context_documents(&self) -> impl Iterator<Item = &Attachment> {
        self.attachments.iter().filter(|a| a.kind == AttachmentKind::ContextDocument)
    }
}

/// Strip surrounding angle brackets and whitespace from a message id.
pub fn bare_message_id(raw: &str) -> String {
    raw.trim().trim_start_matches('<').trim_end_matches('>').trim().to_string()
}

fn check_structure(mail: &ParsedMail<'_>, raw: &[u8]) -> Result<(), IngestError> {
    if mail.headers.is_empty() {
        return Err(IngestError::Parse("no header fields".into()));
    }
    if let Some(bad) = mail.headers.iter().find(|h| {
        let key = h.get_key_ref();
        key.is_empty() || key.chars().any(|c| c.is_whitespace() || c.is_control())
    }) {
        return Err(IngestError::Parse(format!("invalid header name {:?}", bad.get_key_ref())));
    }
    check_multipart_closed(mail, raw)
}

// A multipart body cut short lacks its closing delimiter.
fn check_multipart_closed(part: &ParsedMail<'_>, raw: &[u8]) -> Result<(), IngestError> {
    if part.ctype.mimetype.starts_with("multipart/") {
        let boundary = part
            .ctype
            .params
            .get("boundary")
            .ok_or_else(|| IngestError::Parse(format!("{} part without boundary", part.ctype.mimetype)))?;
        let closing = format!("--{boundary}--");
        if !raw.windows(closing.len()).any(|w| w == closing.as_bytes()) {
            return Err(IngestError::Parse(format!("multipart body truncated (no closing {closing:?})")));
        }
        for sub in &part.subparts {
            check_multipart_closed(sub, raw)?;
        }
    }
    Ok(())
}

#[derive(Default)]
struct Walk {
    plain: Vec<String>,
    html: Vec<String>,
    attachments: Vec<Attachment>,
    warnings: Vec<String>,
}

fn walk(part: &ParsedMail<'_>, out: &mut Walk) {
    let mimetype = part.ctype.mimetype.to_ascii_lowercase();
    if mimetype.starts_with("multipart/") {
        for sub in &part.subparts {
            walk(sub, out);
        }
        return;
    }
    let disposition = part.get_content_disposition();
    let filename = disposition
        .params
        .get("filename")
        .or_else(|| part.ctype.params.get("name"))
        .cloned();
    let is_body_text = disposition.disposition != DispositionType::Attachment
        && filename.is_none()
        && (mimetype == "text/plain" || mimetype == "text/html");

    if is_body_text {
        match part.get_body() {
            Ok(text) => {
                let text = text.replace("\r\n", "\n");
                if mimetype == "text/plain" {
                    out.plain.push(text);
                } else {
                    out.html.push(text);
                }
            }
            Err(e) => out.warnings.push(format!("dropped undecodable {mimetype} body part: {e}")),
        }
        return;
    }

    let filename = filename.unwrap_or_else(|| format!("attachment-{}", out.attachments.len() + 1));
    match part.get_body_raw() {
        Ok(bytes) => out.attachments.push(Attachment {
            media_type: MediaType::resolve(&mimetype, &filename),
            filename,
            bytes,
            kind: AttachmentKind::ContextDocument,
        }),
        Err(e) => out.warnings.push(format!("dropped undecodable attachment {filename:?}: {e}")),
    }
}

/// Parse a raw message into a request. Attachments are provisionally
/// `ContextDocument`; [`classify_attachments`] assigns final kinds.
pub fn parse_inbound(raw: &[u8]) -> Result<InboundRequest, IngestError> {
    if raw.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(IngestError::Parse("empty message".into()));
    }
    let mail = mailparse::parse_mail(raw).map_err(|e| IngestError::Parse(e.to_string()))?;
    check_structure(&mail, raw)?;

    let headers = mail.get_headers();
    let mut warnings = Vec::new();
    let (message_id, message_id_synthesized) = match headers
        .get_first_value("Message-ID")
        .map(|v| bare_message_id(&v))
        .filter(|v| !v.is_empty())
    {
        Some(id) => (id, false),
        None => {
            let id = format!("{}@{SYNTHETIC_ID_DOMAIN}", &sha256_hex(raw)[..32]);
            warnings.push(format!("message had no Message-ID; using synthesized id {id}"));
            (id, true)
        }
    };

    let from = headers.get_first_value("From").unwrap_or_default();
    let sender = mailparse::addrparse(&from)
        .ok()
        .and_then(|list| {
            list.iter().find_map(|a| match a {
                mailparse::MailAddr::Single(s) => Some(s.addr.clone()),
                mailparse::MailAddr::Group(g) => g.addrs.first().map(|s| s.addr.clone()),
            })
        })
        .unwrap_or_else(|| from.trim().to_string());

    let received_at = headers
        .get_first_value("Date")
        .and_then(|d| mailparse::dateparse(&d).ok())
        .and_then(|ts| Utc.timestamp_opt(ts, 0).single())
        .unwrap_or_else(Utc::now);

    let mut walked = Walk::default();
    walk(&mail, &mut walked);
    warnings.append(&mut walked.warnings);

    let instruction_text = if walked.plain.is_empty() {
        walked.html.iter().map(|h| strip_html(h)).filter(|t| !t.is_empty()).collect::<Vec<_>>().join("\n")
    } else {
        walked.plain.iter().map(|t| t.trim_end_matches(['\n', '\r'])).collect::<Vec<_>>().join("\n")
    };

    Ok(InboundRequest {
        message_id,
        message_id_synthesized,
        sender,
        subject: headers.get_first_value("Subject").unwrap_or_default(),
        instruction_text,
        attachments: walked.attachments,
        received_at,
        warnings,
        no_target_form: false,
    })
}

/// Kind of one attachment. Depends only on the media type and payload.
pub fn classify(media_type: &MediaType, bytes: &[u8]) -> AttachmentKind {
    match media_type {
        MediaType::Pdf if form::has_form_fields(bytes) => AttachmentKind::TargetForm,
        MediaType::Pdf | MediaType::Png | MediaType::Jpeg | MediaType::Tiff => AttachmentKind::ContextDocument,
        MediaType::Other(_) => AttachmentKind::Ignored,
    }
}

/// Assign attachment kinds and flag requests without a fillable PDF. Extra
/// fillable PDFs beyond the first produce a warning.
pub fn classify_attachments(mut request: InboundRequest) -> InboundRequest {
    for a in &mut request.attachments {
        a.kind = classify(&a.media_type, &a.bytes);
    }
    let targets: Vec<&str> = request
        .attachments
        .iter()
        .filter(|a| a.kind == AttachmentKind::TargetForm)
        .map(|a| a.filename.as_str())
        .collect();
    request.no_target_form = targets.is_empty();
    let extra: Vec<String> = targets
        .iter()
        .skip(1)
        .map(|name| format!("additional fillable PDF {name:?} was not processed; only the first form is filled"))
        .collect();
    let ignored: Vec<String> = request
        .attachments
        .iter()
        .filter(|a| a.kind == AttachmentKind::Ignored)
        .map(|a| format!("attachment {:?} ({}) is not a supported type and was ignored", a.filename, a.media_type))
        .collect();
    request.warnings.extend(extra);
    request.warnings.extend(ignored);
    request
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAIN: &str = "From: Maria <maria@example.org>\r\nTo: forms@example.org\r\nSubject: Hola\r\n\
Message-ID: <abc@example.org>\r\nDate: Tue, 1 Jul 2025 10:00:00 +0000\r\n\r\nPlease fill it.\r\n";

    #[test]
    fn plain_message_without_attachments() {
        let r = parse_inbound(PLAIN.as_bytes()).unwrap();
        assert_eq!(r.message_id, "abc@example.org");
        assert!(!r.message_id_synthesized);
        assert_eq!(r.sender, "maria@example.org");
        assert_eq!(r.subject, "Hola");
        assert_eq!(r.instruction_text, "Please fill it.");
        assert!(r.attachments.is_empty());
        assert_eq!(r.received_at.to_rfc3339(), "2025-07-01T10:00:00+00:00");
    }

    #[test]
    fn missing_message_id_is_synthesized_from_content() {
        let raw = PLAIN.replace("Message-ID: <abc@example.org>\r\n", "");
        let a = parse_inbound(raw.as_bytes()).unwrap();
        let b = parse_inbound(raw.as_bytes()).unwrap();
        assert!(a.message_id_synthesized);
        assert_eq!(a.message_id, b.message_id);
        assert!(a.message_id.ends_with(SYNTHETIC_ID_DOMAIN));
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn html_only_body_is_stripped() {
        let raw = "From: a@b.c\r\nSubject: x\r\nContent-Type: text/html; charset=utf-8\r\n\r\n\
<html><body><p>Rellene   el <b>formulario</b></p>\r\n<p>por favor &amp; gracias</p></body></html>\r\n";
        let r = parse_inbound(raw.as_bytes()).unwrap();
        assert_eq!(r.instruction_text, "Rellene el formulario por favor & gracias");
    }

    #[test]
    fn alternative_prefers_plain() {
        let raw = "From: a@b.c\r\nSubject: x\r\nMIME-Version: 1.0\r\n\
Content-Type: multipart/alternative; boundary=\"B\"\r\n\r\n--B\r\nContent-Type: text/plain\r\n\r\nplain text\r\n\
--B\r\nContent-Type: text/html\r\n\r\n<p>html text</p>\r\n--B--\r\n";
        assert_eq!(parse_inbound(raw.as_bytes()).unwrap().instruction_text, "plain text");
    }

    #[test]
    fn base64_latin1_body_is_decoded() {
        // "Añada mi NIE" in ISO-8859-1, base64
        let raw = "From: a@b.c\r\nSubject: x\r\nContent-Type: text/plain; charset=iso-8859-1\r\n\
Content-Transfer-Encoding: base64\r\n\r\nQfFhZGEgbWkgTklF\r\n";
        assert_eq!(parse_inbound(raw.as_bytes()).unwrap().instruction_text, "Añada mi NIE");
    }

    #[test]
    fn non_mime_and_truncated_are_errors() {
        assert!(parse_inbound(b"").is_err());
        assert!(parse_inbound(b"just some words without any header structure\n\nmore").is_err());
        let truncated = "From: a@b.c\r\nContent-Type: multipart/mixed; boundary=\"X\"\r\n\r\n--X\r\n\
Content-Type: text/plain\r\n\r\nhello\r\n--X\r\nContent-Type: application/pdf\r\n";
        assert!(matches!(parse_inbound(truncated.as_bytes()), Err(IngestError::Parse(_))));
    }

    #[test]
    fn media_type_resolution() {
        assert_eq!(MediaType::resolve("application/PDF; name=a.pdf", "a.pdf"), MediaType::Pdf);
        assert_eq!(MediaType::resolve("application/octet-stream", "scan.JPG"), MediaType::Jpeg);
        assert_eq!(MediaType::resolve("application/octet-stream", "scan.tif"), MediaType::Tiff);
        assert_eq!(MediaType::resolve("text/csv", "a.pdf"), MediaType::Other("text/csv".into()));
        assert!(!MediaType::resolve("application/msword", "a.doc").is_accepted());
    }

    #[test]
    fn classification_of_non_pdf_types() {
        assert_eq!(classify(&MediaType::Png, b"\x89PNG"), AttachmentKind::ContextDocument);
        assert_eq!(classify(&MediaType::Tiff, b""), AttachmentKind::ContextDocument);
        assert_eq!(classify(&MediaType::Other("text/csv".into()), b"a,b"), AttachmentKind::Ignored);
        assert_eq!(classify(&MediaType::Pdf, b"not a pdf"), AttachmentKind::ContextDocument);
    }

    #[test]
    fn empty_attachment_list_flags_no_target() {
        let r = classify_attachments(parse_inbound(PLAIN.as_bytes()).unwrap());
        assert!(r.no_target_form);
        assert!(r.target_form().is_none());
    }
}
