//! Chat-completion access across model families.

mod remote;
mod scripted;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::prompt::{DEFAULT_BUDGET_CHARS, SYSTEM_MESSAGE};
use crate::sync::{RetryPolicy, Semaphore};

pub use remote::{RemoteBackend, RemoteConfig, DEFAULT_LLM_BASE_URL};
pub use scripted::{Matcher, Rule, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;
pub const DEFAULT_IN_FLIGHT: usize = 2;
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("endpoint rejected credentials (HTTP {0})")]
    AuthFailed(u16),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("request needs about {estimated_tokens} tokens but the {model} window is {window}")]
    ContextOverflow {
        model: String,
        estimated_tokens: usize,
        window: u32,
    },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("empty {0} message")]
    EmptyMessage(&'static str),
    #[error("scripted rules have no default rule")]
    NoDefaultRule,
    #[error("invalid scripted rules: {0}")]
    InvalidRules(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub key: String,
    pub provider_label: String,
    pub parameter_count: String,
    pub context_window_tokens: u32,
    pub endpoint_model_id: String,
}

impl ModelSpec {
    fn new(key: &str, provider: &str, params: &str, window: u32, endpoint: &str) -> Self {
        Self {
            key: key.into(),
            provider_label: provider.into(),
            parameter_count: params.into(),
            context_window_tokens: window,
            endpoint_model_id: endpoint.into(),
        }
    }

    /// Prompt budget in chars: the default, shrunk when the window minus the
    /// output reservation and system message is smaller.
    pub fn prompt_budget_chars(&self, max_output_tokens: u32) -> usize {
        let room = (self.context_window_tokens.saturating_sub(max_output_tokens) as usize) * CHARS_PER_TOKEN;
        room.saturating_sub(SYSTEM_MESSAGE.chars().count())
            .min(DEFAULT_BUDGET_CHARS)
    }
}

/// The four evaluated models.
pub fn registry_default() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(
            "llama4-scout",
            "Meta",
            "17B",
            131_000,
            "meta-llama/llama-4-scout-17b-16e-instruct",
        ),
        ModelSpec::new(
            "deepseek-r1",
            "DeepSeek",
            "70B",
            128_000,
            "deepseek-r1-distill-llama-70b",
        ),
        ModelSpec::new("mistral-saba", "Mistral", "24B", 32_000, "mistral-saba-24b"),
        ModelSpec::new("gemma2-9b", "Google", "9B", 8_000, "gemma2-9b-it"),
    ]
}

#[derive(Clone, Debug)]
pub struct Registry {
    models: Vec<ModelSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        Self {
            models: registry_default(),
        }
    }
}

impl Registry {
    /// Default registry with `LLM_MODEL_ID_<KEY>` endpoint overrides applied.
    pub fn from_env() -> Self {
        Self::default().with_overrides(|name| std::env::var(name).ok())
    }

    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        for m in &mut self.models {
            let var = format!("LLM_MODEL_ID_{}", m.key.to_uppercase().replace('-', "_"));
            if let Some(id) = lookup(&var).filter(|s| !s.trim().is_empty()) {
                m.endpoint_model_id = id;
            }
        }
        self
    }

    pub fn lookup(&self, key: &str) -> Result<&ModelSpec, LlmError> {
        self.models
            .iter()
            .find(|m| m.key == key)
            .ok_or_else(|| LlmError::UnknownModel(key.to_string()))
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_message: String,
    pub user_message: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(user_message: impl Into<String>) -> Self {
        Self {
            system_message: SYSTEM_MESSAGE.to_string(),
            user_message: user_message.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn estimated_tokens(&self) -> usize {
        let chars = self.system_message.chars().count() + self.user_message.chars().count();
        chars.div_ceil(CHARS_PER_TOKEN) + self.max_output_tokens as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

/// Outcome of one attempt against a backend.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    Timeout,
    Network(String),
    /// Non-success HTTP status with an optional Retry-After hint.
    Status {
        code: u16,
        retry_after: Option<Duration>,
    },
    /// A success response that did not contain a message.
    Malformed(String),
}

impl BackendError {
    fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Network(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            BackendError::Malformed(_) => false,
        }
    }
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Timeout => f.write_str("timeout"),
            BackendError::Network(e) => write!(f, "network: {e}"),
            BackendError::Status { code, .. } => write!(f, "HTTP {code}"),
            BackendError::Malformed(e) => write!(f, "malformed response: {e}"),
        }
    }
}

/// A single, unretried chat call.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, model: &ModelSpec, req: &ChatRequest) -> Result<BackendReply, BackendError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency: Duration,
    pub usage: Option<Usage>,
}

/// Retries, window checks and an in-flight cap in front of a backend.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    in_flight: Semaphore,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self::with_limits(backend, RetryPolicy::default(), DEFAULT_IN_FLIGHT)
    }

    pub fn with_limits(backend: Arc<dyn ChatBackend>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            backend,
            retry,
            in_flight: Semaphore::new(max_in_flight),
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(&self, model: &ModelSpec, req: &ChatRequest) -> Result<Completion, LlmError> {
        if req.system_message.trim().is_empty() {
            return Err(LlmError::EmptyMessage("system"));
        }
        if req.user_message.trim().is_empty() {
            return Err(LlmError::EmptyMessage("user"));
        }
        let estimated_tokens = req.estimated_tokens();
        if estimated_tokens > model.context_window_tokens as usize {
            return Err(LlmError::ContextOverflow {
                model: model.key.clone(),
                estimated_tokens,
                window: model.context_window_tokens,
            });
        }

        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.backend.send(model, req) {
                Ok(reply) => {
                    tracing::debug!(model = %model.key, attempts, "completion received");
                    return Ok(Completion {
                        text: reply.text,
                        attempts,
                        latency: started.elapsed(),
                        usage: reply.usage,
                    });
                }
                Err(BackendError::Status {
                    code: code @ (401 | 403),
                    ..
                }) => return Err(LlmError::AuthFailed(code)),
                Err(e) if !e.is_transient() => return Err(LlmError::Rejected(e.to_string())),
                Err(e) => {
                    tracing::warn!(model = %model.key, attempts, error = %e, "transient completion failure");
                    if attempts > self.retry.max_retries {
                        return Err(LlmError::Exhausted {
                            attempts,
                            last: e.to_string(),
                        });
                    }
                    let mut wait = self.retry.delay(attempts);
                    if let BackendError::Status {
                        retry_after: Some(hint),
                        ..
                    } = e
                    {
                        wait = wait.max(hint.min(self.retry.max_delay));
                    }
                    std::thread::sleep(wait);
                }
            }
        }
    }
}
