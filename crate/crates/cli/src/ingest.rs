use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::Args;
use phishguard_core::email::{
    anonymize_sender, preprocess_corpus, preprocess_records, read_eml_dir, write_corpus_jsonl, IngestOutcome,
    RecordFields,
};

pub const EXIT_BAD_INPUT: u8 = 2;

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory of .eml files (with optional legitimate/ and phishing/
    /// subdirectories) or a JSONL file of {id, subject, sender, body, label} records.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write the cleaned corpus (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Ingestion report path; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Replace the local part of every sender address.
    #[arg(long)]
    pub anonymize: bool,
}

fn read_records(path: &Path) -> Result<Vec<RecordFields>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("line {}", n + 1))?);
    }
    Ok(out)
}

fn load(input: &Path) -> Result<(usize, IngestOutcome)> {
    if input.is_dir() {
        let raw = read_eml_dir(input)?;
        Ok((raw.len(), preprocess_corpus(&raw)))
    } else {
        let records = read_records(input)?;
        Ok((records.len(), preprocess_records(&records)))
    }
}

pub fn run(args: &IngestArgs) -> Result<ExitCode> {
    let (found, mut outcome) = match load(&args.input) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot read {}: {e:#}", args.input.display());
            return Ok(ExitCode::from(EXIT_BAD_INPUT));
        }
    };
    if found == 0 {
        eprintln!("error: no emails found in {}", args.input.display());
        return Ok(ExitCode::from(EXIT_BAD_INPUT));
    }
    if outcome.emails.is_empty() {
        eprintln!("error: none of the {found} emails survived preprocessing");
        eprintln!("{}", serde_json::to_string(&outcome.report)?);
        return Ok(ExitCode::from(EXIT_BAD_INPUT));
    }
    if args.anonymize {
        for email in &mut outcome.emails {
            email.sender = anonymize_sender(&email.sender)?;
        }
    }

    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    write_corpus_jsonl(&mut writer, &outcome.emails)?;
    std::io::Write::flush(&mut writer)?;

    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".report.json");
        p.into()
    });
    let report = serde_json::to_string_pretty(&outcome.report)?;
    std::fs::write(&report_path, format!("{report}\n"))
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!("{}", serde_json::to_string(&outcome.report)?);
    Ok(ExitCode::SUCCESS)
}
