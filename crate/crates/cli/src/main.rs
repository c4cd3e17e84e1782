mod classify;
mod evaluate;
mod index_cmd;
mod ingest;
mod serve;
mod setup;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Personalized phishing detection over a user's own mail history.
///
/// Secrets are read from the environment only: LLM_API_KEY (and
/// LLM_BASE_URL), VT_API_KEY, EMBED_API_KEY (and EMBED_BASE_URL).
#[derive(Parser, Debug)]
#[command(name = "phishguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode, clean and de-duplicate raw mail into a JSONL corpus.
    Ingest(ingest::IngestArgs),
    /// Embed a corpus into a searchable index of known legitimate mail.
    Index(index_cmd::IndexArgs),
    /// Classify one message. Exit code: 0 legitimate, 3 phishing,
    /// 4 fail-closed fallback, 5 error.
    Classify(classify::ClassifyArgs),
    /// Run the with/without-retrieval evaluation matrix over a labeled corpus.
    Evaluate(evaluate::EvaluateArgs),
    /// Serve POST /classify and GET /healthz.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => ingest::run(args),
        Command::Index(args) => index_cmd::run(args).map(|()| ExitCode::SUCCESS),
        Command::Classify(args) => return classify::run(args),
        Command::Evaluate(args) => evaluate::run(args).map(|()| ExitCode::SUCCESS),
        Command::Serve(args) => serve::run(args).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
