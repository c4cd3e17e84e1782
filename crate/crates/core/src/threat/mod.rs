//! Domain and URL reputation evidence for a query email.

mod client;
mod extract;
mod summary;

use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use client::{FixtureEntry, ReputationClient, ReputationConfig, Source, DEFAULT_VT_BASE_URL};
pub use extract::{extract_domain, extract_elements, extract_urls};
pub use summary::{summarize_threat, EMPTY_SUMMARY};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ThreatError {
    #[error("sender {0:?} contains no '@'")]
    NoAtSign(String),
    #[error("sender {0:?} has an empty domain")]
    EmptyDomain(String),
    #[error("rate limited, retry after {}s", retry_after.as_secs())]
    RateLimited { retry_after: Duration },
    #[error("reputation service rejected credentials")]
    AuthFailed,
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Domain,
    Url,
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementKind::Domain => "domain",
            ElementKind::Url => "url",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreatElement {
    pub value: String,
    pub kind: ElementKind,
}

impl ThreatElement {
    pub fn domain(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            kind: ElementKind::Domain,
        }
    }

    pub fn url(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            kind: ElementKind::Url,
        }
    }
}

/// Multi-engine scan counts for one element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementVerdict {
    pub element: ThreatElement,
    pub harmless: u32,
    pub suspicious: u32,
    pub malicious: u32,
    pub reputation: i64,
    pub engines_total: u32,
    pub fetched_at: DateTime<Utc>,
    /// The service has no record of this element; counts are all zero.
    #[serde(default)]
    pub not_found: bool,
}

impl ElementVerdict {
    pub fn unknown(element: ThreatElement, fetched_at: DateTime<Utc>) -> Self {
        Self {
            element,
            harmless: 0,
            suspicious: 0,
            malicious: 0,
            reputation: 0,
            engines_total: 0,
            fetched_at,
            not_found: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupFailure {
    pub element: ThreatElement,
    pub reason: String,
}

/// Every extracted element lands in exactly one of `verdicts` or `errors`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatReport {
    pub verdicts: Vec<ElementVerdict>,
    pub errors: Vec<LookupFailure>,
}

impl ThreatReport {
    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty() && self.errors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.verdicts.len() + self.errors.len()
    }
}
