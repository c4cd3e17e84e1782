//! Embedding vectors, similarity arithmetic and the provider seam.
//!
//! Two providers ship: [`HashEmbedder`], an offline signed feature-hashing
//! vectorizer, and [`RemoteEmbedder`], a client for the usual
//! `POST /embeddings` JSON API. Both produce raw vectors; callers normalize.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::email::CleanEmail;
use crate::sync::{RetryPolicy, Semaphore};

pub const DEFAULT_DIM: usize = 384;
/// Characters of `subject sender body` passed to a provider; the tail is cut.
pub const MAX_INPUT_CHARS: usize = 8000;
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("embedding dimension must be positive")]
    EmptyDimension,
    #[error("embedding provider {provider} unavailable after {attempts} attempt(s): {reason}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        reason: String,
    },
}

/// A real vector of fixed dimension with finite components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyDimension);
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64, EmbeddingError> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|x| x * alpha).collect())
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Projects `v` onto the unit sphere.
pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbeddingError> {
    let norm = v.norm();
    if norm < ZERO_NORM {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(EmbeddingVector(v.0.iter().map(|x| x / norm).collect()))
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((a.dot(b)? / (na * nb)).clamp(-1.0, 1.0))
}

/// Anything that turns text into a vector of a fixed, declared dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

/// Text handed to the provider for an email: fields joined by single spaces,
/// cut to [`MAX_INPUT_CHARS`] characters (the body tail goes first).
pub fn embedding_input(email: &CleanEmail) -> String {
    let joined = format!("{} {} {}", email.subject, email.sender, email.body);
    match joined.char_indices().nth(MAX_INPUT_CHARS) {
        Some((cut, _)) => joined[..cut].to_string(),
        None => joined,
    }
}

/// Embeds an email and checks the provider honored its declared dimension.
/// The returned vector is not normalized.
pub fn embed_email(provider: &dyn EmbeddingProvider, email: &CleanEmail) -> Result<EmbeddingVector, EmbeddingError> {
    let v = provider.embed(&embedding_input(email))?;
    if v.dim() != provider.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: provider.dim(),
            got: v.dim(),
        });
    }
    Ok(v)
}

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer spreads FNV's weak low bits
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing over lowercase alphanumeric tokens. Each token adds
/// ±1 to one bucket; empty or token-free text gives the zero vector.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    let dim = dim.max(1);
    let mut values = vec![0.0; dim];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = fnv1a64(seed, token.to_lowercase().as_bytes());
        let bucket = (h % dim as u64) as usize;
        values[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    EmbeddingVector(values)
}

#[derive(Clone, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, 0)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(hash_embed(text, self.dim, self.seed))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: [&'a str; 1],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub dim: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteEmbedderConfig {
    /// Reads `EMBED_BASE_URL` (required), `EMBED_API_KEY` and `EMBED_MODEL`.
    pub fn from_env(dim: usize) -> Option<Self> {
        let base_url = std::env::var("EMBED_BASE_URL").ok()?;
        Some(Self {
            base_url,
            api_key: std::env::var("EMBED_API_KEY").ok(),
            model: std::env::var("EMBED_MODEL").unwrap_or_else(|_| "all-MiniLM-L6-v2".into()),
            dim,
            max_in_flight: 4,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        })
    }
}

/// JSON-over-HTTP embedding client: request `{"input":[text],"model":m}`,
/// response `{"data":[{"embedding":[...]}]}`.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    http: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbeddingError> {
        if config.dim == 0 {
            return Err(EmbeddingError::EmptyDimension);
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbeddingError::ProviderUnavailable {
                provider: config.model.clone(),
                attempts: 0,
                reason: e.to_string(),
            })?;
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight),
            http,
            config,
        })
    }

    fn attempt(&self, text: &str) -> Result<Vec<f64>, (bool, String)> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let mut req = self.http.post(url).json(&EmbedRequest {
            input: [text],
            model: &self.config.model,
        });
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            return Err((transient, format!("HTTP {status}")));
        }
        let body: EmbedResponse = resp.json().map_err(|e| (false, e.to_string()))?;
        body.data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or((false, "response contained no embedding".into()))
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let _permit = self.in_flight.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(text) {
                Ok(values) => {
                    if values.len() != self.config.dim {
                        return Err(EmbeddingError::DimensionMismatch {
                            expected: self.config.dim,
                            got: values.len(),
                        });
                    }
                    return EmbeddingVector::new(values);
                }
                Err((transient, reason)) => {
                    if !transient || attempts > self.config.retry.max_retries {
                        return Err(EmbeddingError::ProviderUnavailable {
                            provider: self.config.model.clone(),
                            attempts,
                            reason,
                        });
                    }
                    std::thread::sleep(self.config.retry.delay(attempts));
                }
            }
        }
    }
}
