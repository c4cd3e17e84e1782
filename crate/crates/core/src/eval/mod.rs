//! Stratified splits, confusion-matrix metrics, the with/without-retrieval
//! run matrix, and report emission.

mod matrix;
mod report;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::email::{CleanEmail, Label};
use crate::prompt::Decision;

pub use matrix::{
    run_matrix, CellReport, CellStatus, EvalReport, IndexManifest, MatrixConfig, Protocol, RagMode, RunMetadata,
};
pub use report::{emit_report, render_csv, render_json, render_markdown, METRIC_NAMES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("corpus has no {0} emails")]
    DegenerateCorpus(&'static str),
    #[error("email {0:?} has no label")]
    Unlabeled(String),
    #[error("email id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("train fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("leakage: test email {0:?} is in the index")]
    Leakage(String),
    #[error("building the index failed: {0}")]
    Index(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

fn check_corpus(corpus: &[CleanEmail]) -> Result<(), EvalError> {
    let mut seen = HashSet::new();
    for e in corpus {
        if e.label.is_none() {
            return Err(EvalError::Unlabeled(e.id.clone()));
        }
        if !seen.insert(e.id.as_str()) {
            return Err(EvalError::DuplicateId(e.id.clone()));
        }
    }
    Ok(())
}

/// Per-class shuffle with a seeded ChaCha stream, `round(n * fraction)`
/// items of each class to train (at least one on each side when the class
/// has two or more). Both halves keep corpus order.
pub fn stratified_split(
    corpus: &[CleanEmail],
    spec: &SplitSpec,
) -> Result<(Vec<CleanEmail>, Vec<CleanEmail>), EvalError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(EvalError::BadFraction(spec.train_fraction));
    }
    check_corpus(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; corpus.len()];
    for (label, name) in [(Label::Legitimate, "legitimate"), (Label::Phishing, "phishing")] {
        let mut members: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label == Some(label)).collect();
        if members.is_empty() {
            return Err(EvalError::DegenerateCorpus(name));
        }
        let n = members.len();
        let mut take = (n as f64 * spec.train_fraction).round() as usize;
        if n >= 2 {
            take = take.clamp(1, n - 1);
        }
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = corpus.iter().zip(in_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(e, _)| e.clone()).collect(),
        test.into_iter().map(|(e, _)| e.clone()).collect(),
    ))
}

/// Phishing is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, actual: Label, predicted: Decision) {
        match (actual, predicted) {
            (Label::Phishing, Decision::Phishing) => self.tp += 1,
            (Label::Phishing, Decision::Legitimate) => self.fn_ += 1,
            (Label::Legitimate, Decision::Phishing) => self.fp += 1,
            (Label::Legitimate, Decision::Legitimate) => self.tn += 1,
        }
    }

    /// Counts implied by a recall and false-positive rate over a corpus of
    /// `positives` phishing and `negatives` legitimate emails.
    pub fn from_rates(recall: f64, fpr: f64, positives: u64, negatives: u64) -> Self {
        let tp = (recall * positives as f64).round() as u64;
        let fp = (fpr * negatives as f64).round() as u64;
        Self::new(tp, positives - tp, fp, negatives - fp)
    }
}

/// `None` marks a metric whose denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
}

impl Metrics {
    /// In reporting order.
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.recall, self.precision, self.f1, self.fpr]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(m: &ConfusionMatrix) -> Metrics {
    let recall = ratio(m.tp, m.tp + m.fn_);
    let precision = ratio(m.tp, m.tp + m.fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics {
        accuracy: ratio(m.tp + m.tn, m.total()),
        recall,
        precision,
        f1,
        fpr: ratio(m.fp, m.fp + m.tn),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
