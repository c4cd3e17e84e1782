use unicode_normalization::UnicodeNormalization;

/// Header names recognized when stripping transport headers pasted into a body.
const TRANSPORT_HEADERS: &[&str] = &[
    "received",
    "return-path",
    "delivered-to",
    "message-id",
    "mime-version",
    "content-type",
    "content-transfer-encoding",
    "dkim-signature",
    "authentication-results",
    "received-spf",
    "arc-seal",
    "arc-message-signature",
    "arc-authentication-results",
    "list-unsubscribe",
    "thread-index",
    "thread-topic",
    "in-reply-to",
    "references",
    "reply-to",
    "sender",
    "from",
    "to",
    "cc",
    "date",
    "subject",
];

fn is_header_line(line: &str) -> bool {
    let Some((name, _)) = line.split_once(':') else {
        return false;
    };
    let name = name.to_ascii_lowercase();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
        return false;
    }
    name.starts_with("x-") || TRANSPORT_HEADERS.contains(&name.as_str())
}

/// Removes a leading block of RFC-822 style `Name: value` lines (with folded
/// continuations) that is terminated by a blank line. Text without such a
/// block is returned unchanged.
pub fn strip_embedded_headers(text: &str) -> &str {
    let mut offset = 0;
    let mut seen_header = false;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\r', '\n']);
        if content.trim().is_empty() {
            if seen_header {
                return &text[offset + line.len()..];
            }
            // Leading blank lines before any header are skipped over.
        } else if is_header_line(content) {
            seen_header = true;
        } else if seen_header && content.starts_with([' ', '\t']) {
            // folded continuation
        } else {
            return text;
        }
        offset += line.len();
    }
    text
}

/// Drops quoted-reply lines (`>` prefix) and everything after a `-- `
/// signature delimiter.
pub fn prune_quoted_and_signature(body: &str) -> String {
    let mut kept = Vec::new();
    for line in body.lines() {
        if line.trim_end() == "--" {
            break;
        }
        if line.trim_start().starts_with('>') {
            continue;
        }
        kept.push(line);
    }
    kept.join("\n")
}

/// NFC, lowercase, strip embedded transport headers, drop non-ASCII and
/// control characters, collapse whitespace. Idempotent; output is ASCII.
pub fn normalize_text(text: &str) -> String {
    let folded: String = text.nfc().collect::<String>().to_lowercase();
    let stripped = strip_embedded_headers(&folded);
    let ascii: String = stripped
        .chars()
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|c| c.is_ascii() && !c.is_ascii_control())
        .collect();
    ascii.split_ascii_whitespace().collect::<Vec<_>>().join(" ")
}
