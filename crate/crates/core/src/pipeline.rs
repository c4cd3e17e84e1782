//! One classification end to end: embed, retrieve, threat lookup, prompt,
//! completion, verdict parsing.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::email::CleanEmail;
use crate::embedding::{embed_email, l2_normalize, EmbeddingError, EmbeddingProvider};
use crate::index::{FlatIndex, IndexError};
use crate::llm::{ChatRequest, Gateway, LlmError, ModelSpec, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::prompt::{build_prompt, consistency_check, parse_verdict, Context, PromptError, Verdict};
use crate::threat::{summarize_threat, ReputationClient, ThreatReport};

pub const DEFAULT_K: usize = 5;
pub const THREAT_SNIPPET_CHARS: usize = 1500;

const REASK_SUFFIX: &str = "\n\nYour previous reply could not be parsed as the required JSON object. \
Reply again with only the JSON object, exactly as specified above.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PipelineError {
    #[error("embedding failed: {0}")]
    EmbeddingFailed(#[from] EmbeddingError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] IndexError),
    #[error("indexed email {0:?} has no stored document")]
    MissingDocument(String),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("model call failed: {0}")]
    LlmExhausted(LlmError),
    #[error("model call failed: {0}")]
    Llm(LlmError),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub rag: bool,
    pub threat: bool,
    pub k: usize,
    pub exclude_self: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            rag: true,
            threat: true,
            k: DEFAULT_K,
            exclude_self: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Embed,
    Retrieve,
    Threat,
    Prompt,
    Complete,
    Parse,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: PipelineStage,
    pub micros: u64,
}

/// `Zeroed` records which stages ran but not how long they took, so
/// results from deterministic backends are byte-identical across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TimingMode {
    #[default]
    Measured,
    Zeroed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextHit {
    pub email_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub email_id: String,
    pub verdict: Verdict,
    pub context_ids: Vec<ContextHit>,
    pub threat_report: ThreatReport,
    pub model_key: String,
    pub rag_enabled: bool,
    pub threat_enabled: bool,
    pub timings: Vec<StageTiming>,
    pub fallback_used: bool,
    pub llm_calls: u32,
    pub warnings: Vec<String>,
}

impl ClassificationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub email_id: String,
    pub error: String,
}

pub type BatchItem = Result<ClassificationResult, BatchFailure>;

/// Immutable after construction; safe to share across threads.
pub struct Engine {
    embedder: Arc<dyn EmbeddingProvider>,
    index: FlatIndex,
    docs: HashMap<String, CleanEmail>,
    threat: Option<Arc<ReputationClient>>,
    gateway: Arc<Gateway>,
    model: ModelSpec,
    timing: TimingMode,
    fallback: bool,
    max_output_tokens: u32,
}

pub struct EngineBuilder {
    engine: Engine,
}

impl EngineBuilder {
    pub fn index(mut self, index: FlatIndex, docs: impl IntoIterator<Item = CleanEmail>) -> Self {
        self.engine.index = index;
        self.engine.docs = docs.into_iter().map(|d| (d.id.clone(), d)).collect();
        self
    }

    pub fn threat_client(mut self, client: Arc<ReputationClient>) -> Self {
        self.engine.threat = Some(client);
        self
    }

    pub fn timing(mut self, mode: TimingMode) -> Self {
        self.engine.timing = mode;
        self
    }

    /// When off, an unusable model answer is an error instead of the
    /// fail-closed verdict.
    pub fn fallback(mut self, enabled: bool) -> Self {
        self.engine.fallback = enabled;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.engine.max_output_tokens = n;
        self
    }

    pub fn build(self) -> Engine {
        self.engine
    }
}

struct Clock {
    mode: TimingMode,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn run<T>(&mut self, stage: PipelineStage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let micros = match self.mode {
            TimingMode::Measured => start.elapsed().as_micros() as u64,
            TimingMode::Zeroed => 0,
        };
        self.timings.push(StageTiming { stage, micros });
        out
    }
}

impl Engine {
    pub fn builder(embedder: Arc<dyn EmbeddingProvider>, gateway: Arc<Gateway>, model: ModelSpec) -> EngineBuilder {
        let dim = embedder.dim();
        EngineBuilder {
            engine: Engine {
                embedder,
                index: FlatIndex::new(dim),
                docs: HashMap::new(),
                threat: None,
                gateway,
                model,
                timing: TimingMode::Measured,
                fallback: true,
                max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            },
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    pub fn classify(&self, email: &CleanEmail, opts: &ClassifyOptions) -> Result<ClassificationResult, PipelineError> {
        if opts.k == 0 {
            return Err(PipelineError::ZeroK);
        }
        let mut clock = Clock {
            mode: self.timing,
            timings: Vec::new(),
        };

        let mut hits = Vec::new();
        let mut context_docs = Vec::new();
        if opts.rag {
            let query = clock.run(PipelineStage::Embed, || {
                embed_email(self.embedder.as_ref(), email).and_then(|v| l2_normalize(&v))
            })?;
            let found = clock.run(PipelineStage::Retrieve, || -> Result<_, PipelineError> {
                if self.index.is_empty() {
                    return Ok(Vec::new());
                }
                let exclude: HashSet<String> = if opts.exclude_self {
                    HashSet::from([email.id.clone()])
                } else {
                    HashSet::new()
                };
                Ok(self.index.search(&query, opts.k, &exclude)?)
            })?;
            for hit in found {
                let doc = self
                    .docs
                    .get(&hit.email_id)
                    .ok_or_else(|| PipelineError::MissingDocument(hit.email_id.clone()))?;
                context_docs.push(doc.clone());
                hits.push(ContextHit {
                    email_id: hit.email_id,
                    score: hit.score,
                });
            }
        }

        let (threat_report, threat_text) = match (&self.threat, opts.threat) {
            (Some(client), true) => clock.run(PipelineStage::Threat, || {
                let report = client.assess(email);
                let text = summarize_threat(&report, THREAT_SNIPPET_CHARS);
                (report, Some(text))
            }),
            _ => (ThreatReport::default(), None),
        };

        let context = if opts.rag {
            Context::Retrieved(&context_docs)
        } else {
            Context::Disabled
        };
        let budget = self.model.prompt_budget_chars(self.max_output_tokens);
        let bundle = clock.run(PipelineStage::Prompt, || {
            build_prompt(email, context, threat_text.as_deref(), budget)
        })?;

        let mut request = ChatRequest::new(bundle.rendered);
        request.max_output_tokens = self.max_output_tokens;
        let mut llm_calls = 0;
        let mut fallback_used = false;
        let mut warnings = Vec::new();

        let first = clock.run(PipelineStage::Complete, || self.call(&request, &mut llm_calls));
        let verdict = match first {
            Err(e) => self.fail_closed(e, &mut fallback_used, &mut warnings)?,
            Ok(text) => match clock.run(PipelineStage::Parse, || parse_verdict(&text)) {
                Ok(v) => v,
                Err(parse_err) => {
                    tracing::warn!(email = %email.id, error = %parse_err, raw = parse_err.raw(), "unparseable verdict, asking again");
                    warnings.push(format!("first answer rejected: {parse_err}"));
                    request.user_message.push_str(REASK_SUFFIX);
                    match self.call(&request, &mut llm_calls) {
                        Err(e) => self.fail_closed(e, &mut fallback_used, &mut warnings)?,
                        Ok(text) => match parse_verdict(&text) {
                            Ok(v) => v,
                            Err(e) => {
                                tracing::warn!(email = %email.id, error = %e, raw = e.raw(), "unparseable verdict after re-ask");
                                self.fail_closed(
                                    LlmError::Rejected(format!("unparseable answer: {e}")),
                                    &mut fallback_used,
                                    &mut warnings,
                                )?
                            }
                        },
                    }
                }
            },
        };
        warnings.extend(consistency_check(&verdict));

        Ok(ClassificationResult {
            email_id: email.id.clone(),
            verdict,
            context_ids: hits,
            threat_report,
            model_key: self.model.key.clone(),
            rag_enabled: opts.rag,
            threat_enabled: opts.threat && self.threat.is_some(),
            timings: clock.timings,
            fallback_used,
            llm_calls,
            warnings,
        })
    }

    fn call(&self, request: &ChatRequest, calls: &mut u32) -> Result<String, LlmError> {
        let c = self.gateway.complete(&self.model, request)?;
        *calls += c.attempts;
        Ok(c.text)
    }

    /// Auth and sizing problems are configuration errors and always surface.
    fn fail_closed(
        &self,
        err: LlmError,
        used: &mut bool,
        warnings: &mut Vec<String>,
    ) -> Result<Verdict, PipelineError> {
        match err {
            LlmError::AuthFailed(_) | LlmError::ContextOverflow { .. } | LlmError::Config(_) => {
                Err(PipelineError::Llm(err))
            }
            _ if !self.fallback => Err(PipelineError::LlmExhausted(err)),
            _ => {
                *used = true;
                warnings.push(format!("fallback verdict: {err}"));
                Ok(Verdict::fail_closed())
            }
        }
    }

    /// Results come back in input order; a failing email yields a
    /// [`BatchFailure`] without stopping the rest.
    pub fn classify_batch(&self, emails: &[CleanEmail], opts: &ClassifyOptions, parallelism: usize) -> Vec<BatchItem> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<BatchItem>>> = emails.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..parallelism.max(1).min(emails.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(email) = emails.get(i) else { break };
                    let item = self.classify(email, opts).map_err(|e| BatchFailure {
                        email_id: email.id.clone(),
                        error: e.to_string(),
                    });
                    *slots[i].lock().unwrap() = Some(item);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot filled"))
            .collect()
    }
}
