use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use phishguard_core::email::{write_corpus_jsonl, Label};
use phishguard_core::embedding::{embed_email, l2_normalize, DEFAULT_DIM};
use phishguard_core::index::{FlatIndex, IndexEntry};

use crate::setup::{docs_path, embedder, read_corpus, EmbedderChoice};

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Cleaned corpus produced by `phishguard ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only emails with this label. By default every email not labeled
    /// phishing is indexed.
    #[arg(long)]
    pub only_label: Option<Label>,
    #[arg(long, value_enum, default_value = "hash")]
    pub embedder: EmbedderChoice,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
}

pub fn run(args: &IndexArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let docs: Vec<_> = corpus
        .into_iter()
        .filter(|e| match args.only_label {
            Some(l) => e.label == Some(l),
            None => e.label != Some(Label::Phishing),
        })
        .collect();
    if docs.is_empty() {
        bail!("no emails in {} match the label filter", args.corpus.display());
    }
    let provider = embedder(args.embedder, args.dim)?;
    let mut index = FlatIndex::new(provider.dim());
    for doc in &docs {
        let v = embed_email(provider.as_ref(), doc)
            .and_then(|v| l2_normalize(&v))
            .with_context(|| format!("embedding {}", doc.id))?;
        index.add(IndexEntry {
            email_id: doc.id.clone(),
            vector: v,
            label: doc.label,
        })?;
    }
    index.save(&args.out)?;
    let sidecar = docs_path(&args.out);
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&sidecar).with_context(|| format!("creating {}", sidecar.display()))?,
    );
    write_corpus_jsonl(&mut file, &docs)?;
    std::io::Write::flush(&mut file)?;
    println!(
        "{}",
        serde_json::json!({ "indexed": index.len(), "dim": index.dim(), "embedder": provider.name() })
    );
    Ok(())
}
