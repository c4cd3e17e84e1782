use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use url::Url;

use super::{ThreatElement, ThreatError};
use crate::email::CleanEmail;

/// Domain of the sender address: text after the last '@', with any
/// `Name <addr>` wrapping removed, lowercased, trailing dot dropped.
pub fn extract_domain(sender: &str) -> Result<ThreatElement, ThreatError> {
    let addr = match (sender.rfind('<'), sender.rfind('>')) {
        (Some(open), Some(close)) if open < close => &sender[open + 1..close],
        _ => sender,
    };
    let at = addr
        .rfind('@')
        .ok_or_else(|| ThreatError::NoAtSign(sender.to_string()))?;
    let domain = addr[at + 1..]
        .trim()
        .trim_matches(|c| c == '<' || c == '>')
        .trim_end_matches('.')
        .to_lowercase();
    if domain.is_empty() {
        return Err(ThreatError::EmptyDomain(sender.to_string()));
    }
    Ok(ThreatElement::domain(domain))
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)\bhttps?://[^\s<>"'`\\()\[\]{}]+"#).expect("valid regex"))
}

/// http(s) URLs in order of first appearance, trailing sentence punctuation
/// stripped, duplicates dropped. Candidates that fail URI parsing are skipped.
pub fn extract_urls(body: &str) -> Vec<ThreatElement> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in url_pattern().find_iter(body) {
        let candidate = m.as_str().trim_end_matches(['.', ',', ';', ':', '!', '?']);
        let Ok(parsed) = Url::parse(candidate) else {
            continue;
        };
        if parsed.host_str().is_none_or(str::is_empty) {
            continue;
        }
        if seen.insert(candidate.to_string()) {
            out.push(ThreatElement::url(candidate));
        }
    }
    out
}

/// Sender domain followed by body URLs. A sender without a usable domain
/// contributes nothing.
pub fn extract_elements(email: &CleanEmail) -> Vec<ThreatElement> {
    let mut out = Vec::new();
    if let Ok(domain) = extract_domain(&email.sender) {
        out.push(domain);
    }
    out.extend(extract_urls(&email.body));
    out
}
