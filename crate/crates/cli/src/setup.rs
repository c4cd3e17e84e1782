use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use phishguard_core::email::{read_corpus_jsonl, CleanEmail};
use phishguard_core::embedding::{EmbeddingProvider, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use phishguard_core::index::FlatIndex;
use phishguard_core::llm::{ChatBackend, Gateway, ModelSpec, Registry, RemoteBackend, RemoteConfig, ScriptedBackend};
use phishguard_core::pipeline::{ClassifyOptions, Engine, DEFAULT_K};
use phishguard_core::threat::{ReputationClient, ReputationConfig, Source};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendChoice {
    Remote,
    Scripted(PathBuf),
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "remote" => Ok(BackendChoice::Remote),
            Some(("scripted", path)) if !path.is_empty() => Ok(BackendChoice::Scripted(path.into())),
            _ => Err(format!("expected `remote` or `scripted:PATH`, got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbedderChoice {
    /// Offline feature hashing.
    Hash,
    /// HTTP embedding service configured through EMBED_* variables.
    Remote,
}

#[derive(Args, Clone, Debug)]
pub struct BackendArgs {
    /// Model key from the registry.
    #[arg(long, default_value = "llama4-scout")]
    pub model: String,
    /// `remote` (OpenAI-compatible endpoint from LLM_* variables) or `scripted:PATH`.
    #[arg(long, default_value = "remote")]
    pub backend: BackendChoice,
    /// Answer reputation lookups from a fixture file instead of the live service.
    #[arg(long, value_name = "PATH")]
    pub threat_fixtures: Option<PathBuf>,
    /// Skip the reputation stage entirely.
    #[arg(long)]
    pub no_threat_intel: bool,
    #[arg(long, value_enum, default_value = "hash")]
    pub embedder: EmbedderChoice,
}

#[derive(Args, Clone, Debug)]
pub struct EngineArgs {
    /// Index written by `phishguard index`.
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Number of retrieved context emails.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub no_rag: bool,
    /// Report model failures as errors instead of a fail-closed verdict.
    #[arg(long)]
    pub no_fallback: bool,
}

impl EngineArgs {
    pub fn options(&self) -> ClassifyOptions {
        ClassifyOptions {
            rag: !self.no_rag,
            threat: !self.backend.no_threat_intel,
            k: self.k,
            exclude_self: true,
        }
    }
}

pub fn docs_path(index: &Path) -> PathBuf {
    let mut name = index.as_os_str().to_owned();
    name.push(".docs.jsonl");
    PathBuf::from(name)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CleanEmail>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_corpus_jsonl(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn embedder(choice: EmbedderChoice, dim: usize) -> Result<Arc<dyn EmbeddingProvider>> {
    Ok(match choice {
        EmbedderChoice::Hash => Arc::new(HashEmbedder::new(dim, 0)),
        EmbedderChoice::Remote => {
            let config = RemoteEmbedderConfig::from_env(dim).context("EMBED_BASE_URL is not set")?;
            Arc::new(RemoteEmbedder::new(config)?)
        }
    })
}

pub fn model(key: &str) -> Result<ModelSpec> {
    Ok(Registry::from_env().lookup(key)?.clone())
}

pub fn gateway(choice: &BackendChoice) -> Result<Arc<Gateway>> {
    let backend: Arc<dyn ChatBackend> = match choice {
        BackendChoice::Remote => Arc::new(RemoteBackend::new(RemoteConfig::from_env()?)?),
        BackendChoice::Scripted(path) => Arc::new(
            ScriptedBackend::from_path(path).with_context(|| format!("loading rules from {}", path.display()))?,
        ),
    };
    Ok(Arc::new(Gateway::new(backend)))
}

/// `None` when reputation checks are off or no source is configured.
pub fn threat_client(args: &BackendArgs) -> Result<Option<Arc<ReputationClient>>> {
    if args.no_threat_intel {
        return Ok(None);
    }
    let source = match &args.threat_fixtures {
        Some(path) => Source::fixture_from_path(path).with_context(|| format!("loading {}", path.display()))?,
        None => match Source::remote_from_env() {
            Some(source) => source?,
            None => {
                tracing::warn!("VT_API_KEY not set and no --threat-fixtures given; reputation checks disabled");
                return Ok(None);
            }
        },
    };
    Ok(Some(Arc::new(ReputationClient::new(
        source,
        ReputationConfig::default(),
    ))))
}

pub fn engine(args: &EngineArgs) -> Result<Engine> {
    if args.k == 0 {
        bail!("--k must be at least 1");
    }
    let model = model(&args.backend.model)?;
    let index =
        FlatIndex::load(&args.index, None).with_context(|| format!("loading index {}", args.index.display()))?;
    let docs = read_corpus(&docs_path(&args.index))?;
    let embedder = embedder(args.backend.embedder, index.dim())?;
    let mut builder = Engine::builder(embedder, gateway(&args.backend.backend)?, model)
        .index(index, docs)
        .fallback(!args.no_fallback);
    if let Some(client) = threat_client(&args.backend)? {
        builder = builder.threat_client(client);
    }
    Ok(builder.build())
}
