use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use phishguard_core::embedding::DEFAULT_DIM;
use phishguard_core::eval::{
    emit_report, render_markdown, run_matrix, sha256_hex, MatrixConfig, Protocol, RagMode, SplitSpec,
};
use phishguard_core::llm::Registry;
use phishguard_core::pipeline::DEFAULT_K;

use crate::setup::{embedder, gateway, read_corpus, threat_client, BackendArgs, BackendChoice};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Labeled corpus produced by `phishguard ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for report.md, report.csv, report.json and index-manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Comma-separated model keys; all registered models when omitted.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "norag,rag")]
    pub modes: Vec<RagMode>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Evaluate every email against an index of all legitimate emails,
    /// relying on self-exclusion instead of a held-out split.
    #[arg(long)]
    pub full_corpus: bool,
    /// Leave fail-closed verdicts out of the confusion matrices.
    #[arg(long)]
    pub exclude_fallbacks: bool,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
}

fn hash_file(hashes: &mut BTreeMap<String, String>, label: &str, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    hashes.insert(format!("{label}:{}", path.display()), sha256_hex(&bytes));
    Ok(())
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    if args.k == 0 {
        bail!("--k must be at least 1");
    }
    let corpus = read_corpus(&args.corpus)?;
    let registry = Registry::from_env();
    let models = if args.models.is_empty() {
        registry.models().to_vec()
    } else {
        args.models
            .iter()
            .map(|k| registry.lookup(k).cloned())
            .collect::<Result<_, _>>()?
    };

    let mut fixture_hashes = BTreeMap::new();
    hash_file(&mut fixture_hashes, "corpus", &args.corpus)?;
    if let BackendChoice::Scripted(path) = &args.backend.backend {
        hash_file(&mut fixture_hashes, "rules", path)?;
    }
    if let (Some(path), false) = (&args.backend.threat_fixtures, args.backend.no_threat_intel) {
        hash_file(&mut fixture_hashes, "threat", path)?;
    }

    let config = MatrixConfig {
        split: SplitSpec {
            train_fraction: args.train_fraction,
            seed: args.seed,
        },
        protocol: if args.full_corpus {
            Protocol::FullCorpus
        } else {
            Protocol::HeldOut
        },
        k: args.k,
        threat: !args.backend.no_threat_intel,
        exclude_fallbacks: args.exclude_fallbacks,
        parallelism: args.parallelism.max(1),
        fixture_hashes,
    };
    let report = run_matrix(
        &corpus,
        &models,
        &args.modes,
        embedder(args.backend.embedder, args.dim)?,
        gateway(&args.backend.backend)?,
        threat_client(&args.backend)?,
        &config,
    )?;
    emit_report(&report, &args.out)?;
    print!("{}", render_markdown(&report));
    Ok(())
}
