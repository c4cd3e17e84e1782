//! Email ingestion: decoding, feature extraction, normalization, validation,
//! de-duplication and anonymization of raw messages into [`CleanEmail`]s.

mod decode;
mod html;
mod normalize;
mod preprocess;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use decode::{decode_message, decode_with_fallback, extract_features, Codec, DecodedMessage, TextPart};
pub use html::html_to_text;
pub use normalize::{normalize_text, prune_quoted_and_signature, strip_embedded_headers};
pub use preprocess::{
    clean_fields, preprocess_corpus, preprocess_corpus_traced, preprocess_records, IngestOutcome, IngestReport,
    RecordFields, Stage,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EmailError {
    #[error("message has no From header")]
    MissingSender,
    #[error("sender {0:?} contains no '@'")]
    NoAtSign(String),
    #[error("message could not be parsed: {0}")]
    Malformed(String),
    #[error("body is empty after normalization")]
    EmptyBody,
    #[error("invalid corpus record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Legitimate,
    Phishing,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Legitimate => "legitimate",
            Label::Phishing => "phishing",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "legitimate" => Ok(Label::Legitimate),
            "phishing" => Ok(Label::Phishing),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// A full message as read from disk or a mailbox, before any decoding.
#[derive(Clone, Debug)]
pub struct RawEmail {
    pub source_id: String,
    pub bytes: Vec<u8>,
    pub label: Option<Label>,
}

impl RawEmail {
    pub fn new(source_id: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            source_id: source_id.into(),
            bytes: bytes.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// The canonical (subject, sender, body) triple every later stage works on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanEmail {
    pub id: String,
    pub subject: String,
    pub sender: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

/// 128-bit content fingerprint used to collapse duplicate messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey(pub [u8; 16]);

impl fmt::Display for DedupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Literal membership test: a sender is valid iff it contains '@'.
pub fn validate_sender(sender: &str) -> bool {
    sender.contains('@')
}

/// SHA-256 over (normalized body, subject, sender), truncated to 128 bits.
pub fn dedup_key(email: &CleanEmail) -> DedupKey {
    let mut hasher = Sha256::new();
    hasher.update(normalize_text(&email.body).as_bytes());
    hasher.update([0x1f]);
    hasher.update(email.subject.as_bytes());
    hasher.update([0x1f]);
    hasher.update(email.sender.as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    DedupKey(out)
}

/// Replaces the local part of the sender address with `user`, keeping the
/// domain verbatim. Display names are dropped along with the local part.
pub fn anonymize_sender(sender: &str) -> Result<String, EmailError> {
    let at = sender
        .rfind('@')
        .ok_or_else(|| EmailError::NoAtSign(sender.to_string()))?;
    let domain = sender[at + 1..].trim().trim_end_matches('>').trim_end();
    Ok(format!("user@{domain}"))
}

pub fn read_corpus_jsonl<R: BufRead>(reader: R) -> Result<Vec<CleanEmail>, EmailError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EmailError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let email: CleanEmail = serde_json::from_str(&line).map_err(|e| EmailError::BadRecord {
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(email);
    }
    Ok(out)
}

/// Reads every `*.eml` file under `dir` in file-name order, using the file
/// name as the source id. Files inside `legitimate/` or `phishing/`
/// subdirectories carry that label; other subdirectories are ignored.
pub fn read_eml_dir(dir: &Path) -> std::io::Result<Vec<RawEmail>> {
    fn collect(dir: &Path, label: Option<Label>, out: &mut Vec<RawEmail>) -> std::io::Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if path.is_dir() {
                if label.is_none() {
                    if let Ok(sub) = name.parse::<Label>() {
                        collect(&path, Some(sub), out)?;
                    }
                }
            } else if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("eml")) {
                let id = match label {
                    Some(l) => format!("{l}/{name}"),
                    None => name,
                };
                out.push(RawEmail {
                    source_id: id,
                    bytes: std::fs::read(&path)?,
                    label,
                });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    collect(dir, None, &mut out)?;
    Ok(out)
}

pub fn write_corpus_jsonl<W: Write>(mut writer: W, emails: &[CleanEmail]) -> std::io::Result<()> {
    for email in emails {
        serde_json::to_writer(&mut writer, email)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
