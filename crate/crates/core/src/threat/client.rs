use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{extract_elements, ElementKind, ElementVerdict, LookupFailure, ThreatElement, ThreatError, ThreatReport};
use crate::email::CleanEmail;
use crate::sync::TokenBucket;

pub const DEFAULT_VT_BASE_URL: &str = "https://www.virustotal.com/api/v3";

/// One scripted element in a fixture file. Elements absent from the file are
/// reported as unknown to the service.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    #[serde(default)]
    pub harmless: u32,
    #[serde(default)]
    pub suspicious: u32,
    #[serde(default)]
    pub malicious: u32,
    #[serde(default)]
    pub undetected: u32,
    #[serde(default)]
    pub timeout: u32,
    #[serde(default)]
    pub reputation: i64,
    #[serde(default)]
    pub engines_total: Option<u32>,
    #[serde(default)]
    pub not_found: bool,
    #[serde(default)]
    pub fetched_at: Option<DateTime<Utc>>,
    /// Simulated transport failure.
    #[serde(default)]
    pub error: Option<String>,
    /// Simulated HTTP 429 with this Retry-After.
    #[serde(default)]
    pub rate_limited_secs: Option<u64>,
}

pub enum Source {
    Fixture(HashMap<String, FixtureEntry>),
    Remote {
        base_url: String,
        api_key: String,
        http: reqwest::blocking::Client,
    },
}

impl Source {
    pub fn fixture_from_path(path: &Path) -> Result<Self, ThreatError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ThreatError::Fixture(format!("{}: {e}", path.display())))?;
        Self::fixture_from_json(&text)
    }

    pub fn fixture_from_json(text: &str) -> Result<Self, ThreatError> {
        serde_json::from_str(text)
            .map(Source::Fixture)
            .map_err(|e| ThreatError::Fixture(e.to_string()))
    }

    pub fn remote(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ThreatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ThreatError::NetworkError(e.to_string()))?;
        Ok(Source::Remote {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            http,
        })
    }

    /// `VT_BASE_URL` (defaulting to the public v3 endpoint) and `VT_API_KEY`.
    pub fn remote_from_env() -> Option<Result<Self, ThreatError>> {
        let key = std::env::var("VT_API_KEY").ok()?;
        let base = std::env::var("VT_BASE_URL").unwrap_or_else(|_| DEFAULT_VT_BASE_URL.to_string());
        Some(Self::remote(base, key, Duration::from_secs(20)))
    }
}

#[derive(Clone, Debug)]
pub struct ReputationConfig {
    pub ttl: Duration,
    pub cache_path: Option<PathBuf>,
    pub requests_per_period: u32,
    pub period: Duration,
    /// A 429 whose Retry-After is at most this long is waited out once.
    pub max_retry_wait: Duration,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        Self {
            ttl: Duration::from_secs(24 * 3600),
            cache_path: None,
            requests_per_period: 4,
            period: Duration::from_secs(60),
            max_retry_wait: Duration::from_secs(5),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CacheEntry {
    verdict: ElementVerdict,
    stored_at_unix: u64,
}

#[derive(Deserialize)]
struct VtResponse {
    data: VtData,
}

#[derive(Deserialize)]
struct VtData {
    attributes: VtAttributes,
}

#[derive(Deserialize)]
struct VtAttributes {
    last_analysis_stats: VtStats,
    #[serde(default)]
    reputation: i64,
}

#[derive(Deserialize)]
struct VtStats {
    #[serde(default)]
    harmless: u32,
    #[serde(default)]
    suspicious: u32,
    #[serde(default)]
    malicious: u32,
    #[serde(default)]
    undetected: u32,
    #[serde(default)]
    timeout: u32,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Reputation lookups with a TTL cache and an outbound rate limiter.
pub struct ReputationClient {
    source: Source,
    config: ReputationConfig,
    cache: Mutex<HashMap<String, CacheEntry>>,
    limiter: TokenBucket,
    fetches: AtomicUsize,
}

impl ReputationClient {
    pub fn new(source: Source, config: ReputationConfig) -> Self {
        let cache = config
            .cache_path
            .as_deref()
            .and_then(|p| std::fs::read_to_string(p).ok())
            .and_then(|t| serde_json::from_str::<HashMap<String, CacheEntry>>(&t).ok())
            .unwrap_or_default();
        Self {
            limiter: TokenBucket::new(config.requests_per_period, config.period),
            source,
            config,
            cache: Mutex::new(cache),
            fetches: AtomicUsize::new(0),
        }
    }

    pub fn is_fixture(&self) -> bool {
        matches!(self.source, Source::Fixture(_))
    }

    /// Lookups that missed the cache and went to the source.
    pub fn fetch_count(&self) -> usize {
        self.fetches.load(Ordering::SeqCst)
    }

    fn cached(&self, value: &str) -> Option<ElementVerdict> {
        let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        let entry = cache.get(value)?;
        let age = unix_now().saturating_sub(entry.stored_at_unix);
        (age < self.config.ttl.as_secs()).then(|| entry.verdict.clone())
    }

    fn store(&self, verdict: &ElementVerdict) {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        cache.insert(
            verdict.element.value.clone(),
            CacheEntry {
                verdict: verdict.clone(),
                stored_at_unix: unix_now(),
            },
        );
        if let Some(path) = &self.config.cache_path {
            let sorted: BTreeMap<_, _> = cache.iter().collect();
            match serde_json::to_vec_pretty(&sorted) {
                Ok(bytes) => {
                    if let Err(e) = std::fs::write(path, bytes) {
                        tracing::warn!(path = %path.display(), %e, "could not persist reputation cache");
                    }
                }
                Err(e) => tracing::warn!(%e, "could not serialize reputation cache"),
            }
        }
    }

    pub fn lookup(&self, element: &ThreatElement) -> Result<ElementVerdict, ThreatError> {
        if let Some(hit) = self.cached(&element.value) {
            return Ok(hit);
        }
        let verdict = match &self.source {
            Source::Fixture(map) => self.fetch_fixture(map, element)?,
            Source::Remote {
                base_url,
                api_key,
                http,
            } => self.fetch_remote(http, base_url, api_key, element)?,
        };
        self.store(&verdict);
        Ok(verdict)
    }

    /// Looks up the sender domain and every body URL. Failed lookups are
    /// recorded in `errors` instead of aborting.
    pub fn assess(&self, email: &CleanEmail) -> ThreatReport {
        let mut report = ThreatReport::default();
        for element in extract_elements(email) {
            match self.lookup(&element) {
                Ok(v) => report.verdicts.push(v),
                Err(e) => report.errors.push(LookupFailure {
                    element,
                    reason: e.to_string(),
                }),
            }
        }
        report
    }

    fn fetch_fixture(
        &self,
        map: &HashMap<String, FixtureEntry>,
        element: &ThreatElement,
    ) -> Result<ElementVerdict, ThreatError> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        let epoch = DateTime::<Utc>::UNIX_EPOCH;
        let Some(entry) = map.get(&element.value) else {
            return Ok(ElementVerdict::unknown(element.clone(), epoch));
        };
        if let Some(secs) = entry.rate_limited_secs {
            return Err(ThreatError::RateLimited {
                retry_after: Duration::from_secs(secs),
            });
        }
        if let Some(reason) = &entry.error {
            return Err(ThreatError::NetworkError(reason.clone()));
        }
        let fetched_at = entry.fetched_at.unwrap_or(epoch);
        if entry.not_found {
            return Ok(ElementVerdict::unknown(element.clone(), fetched_at));
        }
        let counted = entry.harmless + entry.suspicious + entry.malicious + entry.undetected + entry.timeout;
        Ok(ElementVerdict {
            element: element.clone(),
            harmless: entry.harmless,
            suspicious: entry.suspicious,
            malicious: entry.malicious,
            reputation: entry.reputation,
            engines_total: entry.engines_total.unwrap_or(counted).max(counted),
            fetched_at,
            not_found: false,
        })
    }

    fn fetch_remote(
        &self,
        http: &reqwest::blocking::Client,
        base_url: &str,
        api_key: &str,
        element: &ThreatElement,
    ) -> Result<ElementVerdict, ThreatError> {
        let url = match element.kind {
            ElementKind::Domain => format!("{base_url}/domains/{}", element.value),
            ElementKind::Url => format!("{base_url}/urls/{}", URL_SAFE_NO_PAD.encode(&element.value)),
        };
        let mut waited = false;
        loop {
            self.limiter.acquire();
            self.fetches.fetch_add(1, Ordering::SeqCst);
            let resp = http
                .get(&url)
                .header("x-apikey", api_key)
                .header("accept", "application/json")
                .send()
                .map_err(|e| ThreatError::NetworkError(e.to_string()))?;
            let status = resp.status().as_u16();
            match status {
                200..=299 => {
                    let body: VtResponse = resp.json().map_err(|e| ThreatError::BadResponse(e.to_string()))?;
                    let s = body.data.attributes.last_analysis_stats;
                    return Ok(ElementVerdict {
                        element: element.clone(),
                        harmless: s.harmless,
                        suspicious: s.suspicious,
                        malicious: s.malicious,
                        reputation: body.data.attributes.reputation,
                        engines_total: s.harmless + s.suspicious + s.malicious + s.undetected + s.timeout,
                        fetched_at: Utc::now(),
                        not_found: false,
                    });
                }
                404 => return Ok(ElementVerdict::unknown(element.clone(), Utc::now())),
                401 | 403 => return Err(ThreatError::AuthFailed),
                429 => {
                    let retry_after = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs)
                        .unwrap_or(Duration::from_secs(60));
                    if !waited && retry_after <= self.config.max_retry_wait {
                        waited = true;
                        std::thread::sleep(retry_after);
                        continue;
                    }
                    return Err(ThreatError::RateLimited { retry_after });
                }
                other => return Err(ThreatError::BadResponse(format!("HTTP {other}"))),
            }
        }
    }
}
