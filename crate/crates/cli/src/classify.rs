use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::Args;
use phishguard_core::email::{CleanEmail, RawEmail};
use phishguard_core::pipeline::ClassificationResult;
use phishguard_core::prompt::Decision;
use serde_json::json;

use crate::setup::{engine, EngineArgs};

pub const EXIT_LEGITIMATE: u8 = 0;
pub const EXIT_PHISHING: u8 = 3;
pub const EXIT_FALLBACK: u8 = 4;
pub const EXIT_ERROR: u8 = 5;

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Message to classify (.eml), or `-` for standard input.
    pub email: PathBuf,
}

pub fn exit_code(result: &ClassificationResult) -> u8 {
    if result.fallback_used {
        EXIT_FALLBACK
    } else if result.verdict.classification_decision == Decision::Phishing {
        EXIT_PHISHING
    } else {
        EXIT_LEGITIMATE
    }
}

fn read_email(path: &PathBuf) -> Result<CleanEmail> {
    let (id, bytes) = if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf)?;
        ("stdin".to_string(), buf)
    } else {
        let id = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        (
            id,
            std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        )
    };
    Ok(CleanEmail::from_raw(&RawEmail::new(id, bytes))?)
}

fn classify(args: &ClassifyArgs) -> Result<ClassificationResult> {
    let email = read_email(&args.email)?;
    let engine = engine(&args.engine)?;
    Ok(engine.classify(&email, &args.engine.options())?)
}

pub fn run(args: &ClassifyArgs) -> ExitCode {
    match classify(args) {
        Ok(result) => {
            println!("{}", result.to_json());
            ExitCode::from(exit_code(&result))
        }
        Err(e) => {
            println!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::from(EXIT_ERROR)
        }
    }
}
