use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_corpus, compute_metrics, stratified_split, ConfusionMatrix, EvalError, Metrics, SplitSpec};
use crate::email::{CleanEmail, Label};
use crate::embedding::{embed_email, l2_normalize, EmbeddingProvider};
use crate::index::{FlatIndex, IndexEntry};
use crate::llm::{Gateway, ModelSpec};
use crate::pipeline::{ClassifyOptions, Engine, TimingMode, DEFAULT_K};
use crate::threat::ReputationClient;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RagMode {
    Norag,
    Rag,
}

impl RagMode {
    pub fn enabled(self) -> bool {
        self == RagMode::Rag
    }
}

impl fmt::Display for RagMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RagMode::Norag => "norag",
            RagMode::Rag => "rag",
        })
    }
}

impl std::str::FromStr for RagMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "rag" | "on" | "w/" => Ok(RagMode::Rag),
            "norag" | "off" | "w/o" => Ok(RagMode::Norag),
            other => Err(format!("unknown mode {other:?} (expected rag or norag)")),
        }
    }
}

/// `HeldOut` evaluates the test split against an index built from the
/// training split. `FullCorpus` evaluates every email against an index of
/// all legitimate emails, relying on self-exclusion at query time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    HeldOut,
    FullCorpus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixConfig {
    pub split: SplitSpec,
    pub protocol: Protocol,
    pub k: usize,
    pub threat: bool,
    pub exclude_fallbacks: bool,
    pub parallelism: usize,
    /// Name to content hash of every input file, recorded verbatim.
    pub fixture_hashes: BTreeMap<String, String>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            protocol: Protocol::HeldOut,
            k: DEFAULT_K,
            threat: true,
            exclude_fallbacks: false,
            parallelism: 4,
            fixture_hashes: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub protocol: Protocol,
    pub index_ids: Vec<String>,
    pub evaluated_ids: Vec<String>,
    /// Evaluated emails found in the index (held-out) or in their own
    /// retrieval results (full corpus). Always empty for a valid run.
    pub leaked_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    Incomplete { failures: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub model_key: String,
    pub mode: RagMode,
    #[serde(flatten)]
    pub status: CellStatus,
    pub n: u64,
    pub matrix: ConfusionMatrix,
    pub metrics: Metrics,
    pub fallback_count: u64,
    pub fallbacks_excluded: bool,
    pub warning_count: u64,
}

impl CellReport {
    pub fn is_complete(&self) -> bool {
        self.status == CellStatus::Complete
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub train_fraction: f64,
    pub protocol: Protocol,
    pub k: usize,
    pub threat_enabled: bool,
    pub embedder: String,
    pub embedding_dim: usize,
    pub backend: String,
    pub corpus_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub index_size: usize,
    pub fixture_hashes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub models: Vec<String>,
    pub modes: Vec<RagMode>,
    pub cells: Vec<CellReport>,
    #[serde(skip)]
    pub manifest: Option<IndexManifest>,
}

impl EvalReport {
    pub fn cell(&self, model_key: &str, mode: RagMode) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.model_key == model_key && c.mode == mode)
    }
}

fn build_index(embedder: &dyn EmbeddingProvider, docs: &[CleanEmail]) -> Result<FlatIndex, EvalError> {
    let mut index = FlatIndex::new(embedder.dim());
    for d in docs {
        let v = embed_email(embedder, d)
            .and_then(|v| l2_normalize(&v))
            .map_err(|e| EvalError::Index(format!("{}: {e}", d.id)))?;
        index
            .add(IndexEntry {
                email_id: d.id.clone(),
                vector: v,
                label: d.label,
            })
            .map_err(|e| EvalError::Index(e.to_string()))?;
    }
    Ok(index)
}

/// Classifies every evaluated email under each (model, mode) cell. The index
/// holds legitimate emails only. Per-email failures mark their cell
/// incomplete without stopping the run.
pub fn run_matrix(
    corpus: &[CleanEmail],
    models: &[ModelSpec],
    modes: &[RagMode],
    embedder: Arc<dyn EmbeddingProvider>,
    gateway: Arc<Gateway>,
    threat: Option<Arc<ReputationClient>>,
    config: &MatrixConfig,
) -> Result<EvalReport, EvalError> {
    check_corpus(corpus)?;
    let (train, test) = match config.protocol {
        Protocol::HeldOut => stratified_split(corpus, &config.split)?,
        Protocol::FullCorpus => (corpus.to_vec(), corpus.to_vec()),
    };
    let legit: Vec<CleanEmail> = train
        .iter()
        .filter(|e| e.label == Some(Label::Legitimate))
        .cloned()
        .collect();
    let index = build_index(embedder.as_ref(), &legit)?;

    let mut manifest = IndexManifest {
        protocol: config.protocol,
        index_ids: index.ids().map(String::from).collect(),
        evaluated_ids: test.iter().map(|e| e.id.clone()).collect(),
        leaked_ids: Vec::new(),
    };
    if config.protocol == Protocol::HeldOut {
        let indexed: HashSet<&str> = index.ids().collect();
        manifest.leaked_ids = test
            .iter()
            .filter(|e| indexed.contains(e.id.as_str()))
            .map(|e| e.id.clone())
            .collect();
        if let Some(id) = manifest.leaked_ids.first() {
            return Err(EvalError::Leakage(id.clone()));
        }
    }

    let mut cells = Vec::new();
    let mut leaked = Vec::new();
    for model in models {
        let mut builder = Engine::builder(embedder.clone(), gateway.clone(), model.clone())
            .index(index.clone(), legit.iter().cloned())
            .timing(TimingMode::Zeroed);
        if let Some(client) = &threat {
            builder = builder.threat_client(client.clone());
        }
        let engine = builder.build();

        for &mode in modes {
            let opts = ClassifyOptions {
                rag: mode.enabled(),
                threat: config.threat,
                k: config.k,
                exclude_self: true,
            };
            let results = engine.classify_batch(&test, &opts, config.parallelism);
            let mut matrix = ConfusionMatrix::default();
            let mut failures = Vec::new();
            let mut fallback_count = 0;
            let mut warning_count = 0;
            for (email, item) in test.iter().zip(results) {
                match item {
                    Ok(r) => {
                        if r.context_ids.iter().any(|h| h.email_id == email.id) {
                            leaked.push(email.id.clone());
                        }
                        warning_count += r.warnings.len() as u64;
                        if r.fallback_used {
                            fallback_count += 1;
                            if config.exclude_fallbacks {
                                continue;
                            }
                        }
                        let label = email.label.expect("corpus checked for labels");
                        matrix.record(label, r.verdict.classification_decision);
                    }
                    Err(f) => failures.push(format!("{}: {}", f.email_id, f.error)),
                }
            }
            tracing::info!(model = %model.key, %mode, n = matrix.total(), failures = failures.len(), "cell finished");
            cells.push(CellReport {
                model_key: model.key.clone(),
                mode,
                status: if failures.is_empty() {
                    CellStatus::Complete
                } else {
                    CellStatus::Incomplete { failures }
                },
                n: matrix.total(),
                metrics: compute_metrics(&matrix),
                matrix,
                fallback_count,
                fallbacks_excluded: config.exclude_fallbacks,
                warning_count,
            });
        }
    }
    leaked.sort();
    leaked.dedup();
    if let Some(id) = leaked.first() {
        return Err(EvalError::Leakage(id.clone()));
    }
    manifest.leaked_ids = leaked;

    Ok(EvalReport {
        metadata: RunMetadata {
            seed: config.split.seed,
            train_fraction: config.split.train_fraction,
            protocol: config.protocol,
            k: config.k,
            threat_enabled: config.threat && threat.is_some(),
            embedder: embedder.name().to_string(),
            embedding_dim: embedder.dim(),
            backend: gateway.backend_name().to_string(),
            corpus_size: corpus.len(),
            train_size: if config.protocol == Protocol::HeldOut {
                train.len()
            } else {
                0
            },
            test_size: test.len(),
            index_size: index.len(),
            fixture_hashes: config.fixture_hashes.clone(),
        },
        models: models.iter().map(|m| m.key.clone()).collect(),
        modes: modes.to_vec(),
        cells,
        manifest: Some(manifest),
    })
}
