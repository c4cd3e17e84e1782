use mailparse::{DispositionType, ParsedMail};

use super::{html::html_to_text, EmailError};

/// Text codecs tried in order by [`decode_with_fallback`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Codec {
    Utf8,
    Latin1,
    Iso8859_1,
}

pub const FALLBACK_CHAIN: [Codec; 3] = [Codec::Utf8, Codec::Latin1, Codec::Iso8859_1];

impl Codec {
    pub fn decode(self, bytes: &[u8]) -> Option<String> {
        match self {
            Codec::Utf8 => std::str::from_utf8(bytes).ok().map(str::to_owned),
            // Both are the identity map from bytes to U+0000..U+00FF.
            Codec::Latin1 | Codec::Iso8859_1 => Some(bytes.iter().map(|&b| char::from(b)).collect()),
        }
    }
}

/// Decodes with the first codec of the chain that accepts the input.
/// Latin-1 maps every byte, so this never fails.
pub fn decode_with_fallback(bytes: &[u8]) -> String {
    FALLBACK_CHAIN
        .iter()
        .find_map(|codec| codec.decode(bytes))
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextPart {
    pub mimetype: String,
    pub text: String,
}

/// A message whose headers and textual parts have been resolved to Unicode.
/// Attachments and non-text parts are not carried over.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecodedMessage {
    pub headers: Vec<(String, String)>,
    pub parts: Vec<TextPart>,
}

impl DecodedMessage {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

fn charset_is_fallback_family(charset: &str) -> bool {
    matches!(
        charset.to_ascii_lowercase().as_str(),
        "" | "us-ascii" | "ascii" | "utf-8" | "utf8" | "iso-8859-1" | "iso_8859-1" | "latin1" | "latin-1"
    )
}

fn decode_part(part: &ParsedMail<'_>) -> Result<String, EmailError> {
    let raw = part.get_body_raw().map_err(|e| EmailError::Malformed(e.to_string()))?;
    if charset_is_fallback_family(&part.ctype.charset) {
        return Ok(decode_with_fallback(&raw));
    }
    // A declared non-Latin charset is honored; fall back to the chain if the
    // label is unknown to the charset tables.
    part.get_body().or_else(|_| Ok(decode_with_fallback(&raw)))
}

/// Parses MIME structure and resolves every header and inline text part to text.
pub fn decode_message(bytes: &[u8]) -> Result<DecodedMessage, EmailError> {
    let parsed = mailparse::parse_mail(bytes).map_err(|e| EmailError::Malformed(e.to_string()))?;
    // get_value() tries UTF-8 then Latin-1 on raw header bytes, then expands
    // RFC 2047 encoded words.
    let headers = parsed
        .get_headers()
        .into_iter()
        .map(|h| (h.get_key(), h.get_value()))
        .collect();

    let mut parts = Vec::new();
    for part in parsed.parts() {
        let mimetype = part.ctype.mimetype.to_ascii_lowercase();
        if !mimetype.starts_with("text/") {
            continue;
        }
        if part.get_content_disposition().disposition == DispositionType::Attachment {
            continue;
        }
        parts.push(TextPart {
            text: decode_part(part)?,
            mimetype,
        });
    }
    Ok(DecodedMessage { headers, parts })
}

/// Selects (subject, sender, body). The body is the concatenation of all
/// text/plain parts, or the first text/html part rendered to text when no
/// plain part exists.
pub fn extract_features(msg: &DecodedMessage) -> Result<(String, String, String), EmailError> {
    let sender = msg
        .header("From")
        .map(|s| s.trim().to_string())
        .ok_or(EmailError::MissingSender)?;
    let subject = msg.header("Subject").unwrap_or("").trim().to_string();

    let plain: Vec<&str> = msg
        .parts
        .iter()
        .filter(|p| p.mimetype == "text/plain")
        .map(|p| p.text.trim_end())
        .collect();
    let body = if !plain.is_empty() {
        plain.join("\n")
    } else if let Some(html) = msg.parts.iter().find(|p| p.mimetype == "text/html") {
        html_to_text(&html.text)
    } else {
        String::new()
    };
    Ok((subject, sender, body))
}
