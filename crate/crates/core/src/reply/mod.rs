//! Outbound replies: the completed form or a rejection, threaded onto the
//! request.

mod sink;

pub use sink::{outbox_file_name, DeliveryError, DeliveryReceipt, DeliverySink, OutboxSink, SmtpConfig, SmtpSink};

use std::fmt::Write as _;
use std::time::SystemTime;

use lettre::message::header::ContentType;
use lettre::message::{Attachment as MimeAttachment, Mailbox, MultiPart, SinglePart};
use lettre::Message;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::form::FilledForm;
use crate::ingest::InboundRequest;
use crate::plan::CompletionPlan;
use crate::util::sha256_hex;

pub const DEFAULT_FROM: &str = "forms@mailform.invalid";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ReplyError {
    #[error("invalid address {address:?}: {reason}")]
    Address { address: String, reason: String },
    #[error("cannot build message: {0}")]
    Build(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyAttachment {
    pub filename: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundReply {
    /// Bare message id of the request being answered.
    pub in_reply_to: String,
    pub from: String,
    pub to: String,
    pub subject: String,
    pub body_text: String,
    pub attachment: Option<ReplyAttachment>,
    /// Serialized RFC 5322 message.
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

fn mailbox(address: &str) -> Result<Mailbox, ReplyError> {
    address
        .trim()
        .parse()
        .map_err(|e: lettre::address::AddressError| ReplyError::Address { address: address.into(), reason: e.to_string() })
}

fn reply_subject(subject: &str) -> String {
    format!("Re: {subject}")
}

fn domain_of(address: &str) -> &str {
    address.rsplit_once('@').map_or("mailform.invalid", |(_, d)| d.trim_end_matches('>'))
}

fn completed_name(original: &str) -> String {
    let stem = original.strip_suffix(".pdf").or_else(|| original.strip_suffix(".PDF")).unwrap_or(original);
    format!("completed_{stem}.pdf")
}

fn push_list(body: &mut String, title: &str, items: &[String]) {
    if items.is_empty() {
        return;
    }
    let _ = writeln!(body, "\n{title}:");
    for item in items {
        let _ = writeln!(body, "  - {item}");
    }
}

const FOOTER: &str = "\nThis reply was generated automatically. Please review the form before submitting it.\n";

fn build(
    request: &InboundRequest,
    from: &str,
    body_text: String,
    attachment: Option<ReplyAttachment>,
) -> Result<OutboundReply, ReplyError> {
    let to = request.sender.trim().to_string();
    let subject = reply_subject(&request.subject);
    let thread = format!("<{}>", request.message_id);
    // stable per request and payload so re-composition is byte-identical apart from Date
    let seed = sha256_hex(
        format!("{}\n{}\n{}", request.message_id, body_text, attachment.as_ref().map_or("", |a| &a.sha256)).as_bytes(),
    );
    let builder = Message::builder()
        .from(mailbox(from)?)
        .to(mailbox(&to)?)
        .subject(subject.clone())
        .in_reply_to(thread.clone())
        .references(thread)
        .message_id(Some(format!("<reply-{}@{}>", &seed[..24], domain_of(from))))
        .date(SystemTime::now());
    let text = SinglePart::builder().content_type(ContentType::TEXT_PLAIN).body(body_text.clone());
    let message = match &attachment {
        Some(a) => {
            let pdf = ContentType::parse("application/pdf").expect("static content type");
            let part = MimeAttachment::new(a.filename.clone()).body(a.bytes.clone(), pdf);
            builder.multipart(
                MultiPart::mixed().boundary(format!("mailform-{}", &seed[..32])).singlepart(text).singlepart(part),
            )
        }
        None => builder.singlepart(text),
    }
    .map_err(|e| ReplyError::Build(e.to_string()))?;
    Ok(OutboundReply {
        in_reply_to: request.message_id.clone(),
        from: from.to_string(),
        to,
        subject,
        body_text,
        attachment,
        bytes: message.formatted(),
    })
}

/// Reply carrying the filled form, with a summary of what was written.
pub fn compose_reply(
    request: &InboundRequest,
    filled: &FilledForm,
    plan: &CompletionPlan,
    from: &str,
) -> Result<OutboundReply, ReplyError> {
    let original = request.target_form().map_or("form.pdf", |a| a.filename.as_str());
    let filename = completed_name(original);
    let blank = plan.blank_count();

    let mut body = String::from("Hello,\n\n");
    let _ = writeln!(body, "The completed form is attached as {filename}.\n");
    let _ = writeln!(body, "Fields filled: {}", filled.applied.len());
    let _ = writeln!(body, "Fields left blank (information not found): {blank}");
    let _ = writeln!(body, "Fields skipped: {}", filled.skipped.len());
    let skipped: Vec<String> = filled.skipped.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    push_list(&mut body, "Skipped fields", &skipped);
    let notes: Vec<String> = filled.notes.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    push_list(&mut body, "Notes", &notes);
    let warnings: Vec<String> = request.warnings.iter().chain(&plan.warnings).cloned().collect();
    push_list(&mut body, "Warnings", &warnings);
    body.push_str(FOOTER);

    let attachment = ReplyAttachment { filename, sha256: sha256_hex(&filled.bytes), bytes: filled.bytes.clone() };
    build(request, from, body, Some(attachment))
}

/// Reply without attachment explaining why the request could not be handled.
pub fn compose_rejection(request: &InboundRequest, reason: &str, from: &str) -> Result<OutboundReply, ReplyError> {
    let mut body = String::from("Hello,\n\nWe could not complete your request.\n\n");
    let _ = writeln!(body, "Reason: {reason}");
    push_list(&mut body, "Warnings", &request.warnings);
    body.push_str(FOOTER);
    build(request, from, body, None)
}

/// Bare `In-Reply-To` id of a serialized reply.
pub fn thread_id(bytes: &[u8]) -> Option<String> {
    let (headers, _) = mailparse::parse_headers(bytes).ok()?;
    use mailparse::MailHeaderMap;
    headers
        .get_first_value("In-Reply-To")
        .map(|v| crate::ingest::bare_message_id(&v))
        .filter(|v| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::form::{generate_test_form, FieldKind, FieldSpec};
    use crate::ingest::{parse_inbound, Attachment, AttachmentKind, MediaType};
    use crate::plan::PlanValue;

    fn request(subject: &str) -> InboundRequest {
        let pdf = generate_test_form(&[FieldSpec::new("a", FieldKind::Text { max_len: None })]).unwrap();
        InboundRequest {
            message_id: "req-1@example.org".into(),
            message_id_synthesized: false,
            sender: "Ana <ana@example.org>".into(),
            subject: subject.into(),
            instruction_text: "fill".into(),
            attachments: vec![Attachment {
                filename: "modelo.pdf".into(),
                media_type: MediaType::Pdf,
                bytes: pdf,
                kind: AttachmentKind::TargetForm,
            }],
            received_at: chrono::Utc::now(),
            warnings: vec![],
            no_target_form: false,
        }
    }

    fn filled(applied: &[&str], skipped: &[(&str, &str)]) -> FilledForm {
        FilledForm {
            bytes: b"%PDF-1.7\n\x00\x01\xff binary".to_vec(),
            applied: applied.iter().map(|k| (k.to_string(), "v".into())).collect(),
            skipped: skipped.iter().map(|(k, r)| (k.to_string(), r.to_string())).collect(),
            notes: BTreeMap::new(),
        }
    }

    fn plan(values: usize, blanks: usize) -> CompletionPlan {
        let mut entries = BTreeMap::new();
        for i in 0..values {
            entries.insert(format!("v{i}"), PlanValue::Value("x".into()));
        }
        for i in 0..blanks {
            entries.insert(format!("b{i}"), PlanValue::IntentionalBlank);
        }
        CompletionPlan { entries, warnings: vec![], model_name: "m".into(), elapsed_s: 0.0 }
    }

    #[test]
    fn subject_prefix() {
        let r = compose_reply(&request("Alta autónomo"), &filled(&[], &[]), &plan(0, 0), DEFAULT_FROM).unwrap();
        assert_eq!(r.subject, "Re: Alta autónomo");
        let parsed = parse_inbound(&r.bytes).unwrap();
        assert_eq!(parsed.subject, "Re: Alta autónomo");
    }

    #[test]
    fn body_counts_and_skips() {
        let r = compose_reply(
            &request("s"),
            &filled(&["v0", "v1"], &[("provincia", "\"Lisboa\" is not an option")]),
            &plan(2, 1),
            DEFAULT_FROM,
        )
        .unwrap();
        assert!(r.body_text.contains("Fields filled: 2"));
        assert!(r.body_text.contains("left blank (information not found): 1"));
        assert!(r.body_text.contains("provincia: \"Lisboa\" is not an option"));
    }

    #[test]
    fn round_trip_attachment_and_threading() {
        let form = filled(&["v0"], &[]);
        let r = compose_reply(&request("s"), &form, &plan(1, 0), DEFAULT_FROM).unwrap();
        assert_eq!(r.in_reply_to, "req-1@example.org");
        let parsed = parse_inbound(&r.bytes).unwrap();
        assert_eq!(parsed.attachments.len(), 1);
        assert_eq!(parsed.attachments[0].filename, "completed_modelo.pdf");
        assert_eq!(sha256_hex(&parsed.attachments[0].bytes), sha256_hex(&form.bytes));
        assert_eq!(parsed.sender, "forms@mailform.invalid");
        assert_eq!(thread_id(&r.bytes).as_deref(), Some("req-1@example.org"));
        let text = String::from_utf8_lossy(&r.bytes);
        assert!(text.contains("References: <req-1@example.org>"));
        assert!(text.contains("Content-Transfer-Encoding: base64"));
    }

    #[test]
    fn rejection_has_no_attachment() {
        let r = compose_rejection(&request("s"), "no fillable PDF form was attached", DEFAULT_FROM).unwrap();
        assert!(r.attachment.is_none());
        let parsed = parse_inbound(&r.bytes).unwrap();
        assert!(parsed.attachments.is_empty());
        assert!(parsed.instruction_text.contains("no fillable PDF form was attached"));
        assert_eq!(thread_id(&r.bytes).as_deref(), Some("req-1@example.org"));
    }

    #[test]
    fn bad_sender_is_an_error() {
        let mut req = request("s");
        req.sender = "not an address".into();
        assert!(matches!(compose_rejection(&req, "x", DEFAULT_FROM), Err(ReplyError::Address { .. })));
    }
}
