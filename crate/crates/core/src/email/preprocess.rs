use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{
    decode_message, dedup_key, extract_features, normalize_text, prune_quoted_and_signature, validate_sender,
    CleanEmail, EmailError, Label, RawEmail,
};

/// Pipeline stages, in the order they are applied to every message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Decode,
    Structure,
    Normalize,
    Validate,
}

/// Counts for one ingestion run. Serialized field names are part of the
/// on-disk report format.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_invalid: usize,
    pub dropped_empty: usize,
    pub dropped_duplicate: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestOutcome {
    pub emails: Vec<CleanEmail>,
    pub report: IngestReport,
}

/// Pre-split fields, as found in a JSONL corpus that never went through MIME.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFields {
    pub id: String,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub sender: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub label: Option<Label>,
}

/// Normalizes the three fields. Quoted replies and signatures are pruned from
/// the body before normalization collapses its line structure.
pub fn clean_fields(
    id: impl Into<String>,
    subject: &str,
    sender: &str,
    body: &str,
    label: Option<Label>,
) -> CleanEmail {
    CleanEmail {
        id: id.into(),
        subject: normalize_text(subject),
        sender: normalize_text(sender),
        body: normalize_text(&prune_quoted_and_signature(body)),
        label,
    }
}

impl CleanEmail {
    /// Builds and validates a single email, e.g. a live classification query.
    pub fn from_fields(id: impl Into<String>, subject: &str, sender: &str, body: &str) -> Result<Self, EmailError> {
        let email = clean_fields(id, subject, sender, body, None);
        if !validate_sender(&email.sender) {
            return Err(EmailError::NoAtSign(email.sender));
        }
        if email.body.is_empty() {
            return Err(EmailError::EmptyBody);
        }
        Ok(email)
    }

    /// Runs the full decode, structure, normalize, validate chain on one message.
    pub fn from_raw(raw: &RawEmail) -> Result<Self, EmailError> {
        let msg = decode_message(&raw.bytes)?;
        let (subject, sender, body) = extract_features(&msg)?;
        let mut email = Self::from_fields(raw.source_id.clone(), &subject, &sender, &body)?;
        email.label = raw.label;
        Ok(email)
    }
}

struct Collector {
    report: IngestReport,
    seen_ids: HashSet<String>,
    validated: Vec<CleanEmail>,
}

impl Collector {
    fn new(input: usize) -> Self {
        Self {
            report: IngestReport {
                input,
                ..IngestReport::default()
            },
            seen_ids: HashSet::new(),
            validated: Vec::new(),
        }
    }

    fn claim_id(&mut self, id: &str) -> bool {
        if self.seen_ids.insert(id.to_string()) {
            true
        } else {
            tracing::warn!(id, "duplicate source id dropped");
            self.report.dropped_invalid += 1;
            false
        }
    }

    fn invalid(&mut self, id: &str, err: &EmailError) {
        tracing::debug!(id, %err, "dropping invalid email");
        self.report.dropped_invalid += 1;
    }

    fn finish(mut self) -> IngestOutcome {
        let mut keys = HashSet::new();
        let mut emails = Vec::with_capacity(self.validated.len());
        for email in self.validated {
            if email.body.is_empty() {
                self.report.dropped_empty += 1;
            } else if !keys.insert(dedup_key(&email)) {
                self.report.dropped_duplicate += 1;
            } else {
                emails.push(email);
            }
        }
        self.report.kept = emails.len();
        IngestOutcome {
            emails,
            report: self.report,
        }
    }
}

/// Decode, structure, normalize and validate every message, then drop
/// incomplete records and later duplicates. Survivors keep input order.
pub fn preprocess_corpus(raw: &[RawEmail]) -> IngestOutcome {
    preprocess_corpus_traced(raw, &mut |_, _| {})
}

/// As [`preprocess_corpus`], reporting each stage entered for each message.
pub fn preprocess_corpus_traced(raw: &[RawEmail], trace: &mut dyn FnMut(&str, Stage)) -> IngestOutcome {
    let mut collector = Collector::new(raw.len());
    for item in raw {
        let id = item.source_id.as_str();
        if !collector.claim_id(id) {
            continue;
        }

        trace(id, Stage::Decode);
        let msg = match decode_message(&item.bytes) {
            Ok(m) => m,
            Err(e) => {
                collector.invalid(id, &e);
                continue;
            }
        };

        trace(id, Stage::Structure);
        let (subject, sender, body) = match extract_features(&msg) {
            Ok(f) => f,
            Err(e) => {
                collector.invalid(id, &e);
                continue;
            }
        };

        trace(id, Stage::Normalize);
        let email = clean_fields(id, &subject, &sender, &body, item.label);

        trace(id, Stage::Validate);
        if !validate_sender(&email.sender) {
            collector.invalid(id, &EmailError::NoAtSign(email.sender.clone()));
            continue;
        }
        collector.validated.push(email);
    }
    collector.finish()
}

/// The normalize/validate/dedup tail applied to already-split records.
pub fn preprocess_records(records: &[RecordFields]) -> IngestOutcome {
    let mut collector = Collector::new(records.len());
    for r in records {
        if !collector.claim_id(&r.id) {
            continue;
        }
        let email = clean_fields(r.id.clone(), &r.subject, &r.sender, &r.body, r.label);
        if !validate_sender(&email.sender) {
            collector.invalid(&r.id, &EmailError::NoAtSign(email.sender.clone()));
            continue;
        }
        collector.validated.push(email);
    }
    collector.finish()
}
