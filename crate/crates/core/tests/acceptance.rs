//! Acceptance checks. Runs as a plain binary so each criterion prints exactly
//! one PASS/FAIL/SKIP line; any failure makes the target exit non-zero.

use std::collections::{BTreeMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use phishguard_core::email::{
    dedup_key, normalize_text, preprocess_corpus, preprocess_corpus_traced, read_eml_dir, validate_sender,
    write_corpus_jsonl, CleanEmail, Label, RawEmail, Stage,
};
use phishguard_core::embedding::{
    cosine_similarity, embed_email, l2_normalize, EmbeddingProvider, EmbeddingVector, HashEmbedder,
};
use phishguard_core::eval::{compute_metrics, run_matrix, ConfusionMatrix, MatrixConfig, Metrics, RagMode, SplitSpec};
use phishguard_core::index::{FlatIndex, IndexEntry};
use phishguard_core::llm::{
    registry_default, Gateway, Matcher, Registry, RemoteBackend, RemoteConfig, Rule, ScriptedBackend,
};
use phishguard_core::pipeline::{ClassifyOptions, Engine, PipelineStage};
use phishguard_core::prompt::{parse_verdict, Decision, Risk, Verdict, VerdictError};
use phishguard_core::sync::RetryPolicy;
use phishguard_core::threat::{ReputationClient, ReputationConfig, Source};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (
    &'static str,
    Option<Duration>,
    Box<dyn FnOnce() -> Result<Status, String>>,
);

enum Status {
    Pass(String),
    Skip(String),
    Fail(String),
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn labeled(id: &str, subject: &str, sender: &str, body: &str, label: Label) -> CleanEmail {
    let mut e = CleanEmail::from_fields(id, subject, sender, body).expect("valid synthetic email");
    e.label = Some(label);
    e
}

// 1 --------------------------------------------------------------------------

struct PublishedRow {
    model: &'static str,
    mode: &'static str,
    accuracy: f64,
    recall: f64,
    precision: f64,
    f1: f64,
    fpr: f64,
}

const PUBLISHED: [PublishedRow; 8] = [
    PublishedRow {
        model: "llama4-scout",
        mode: "w/o",
        accuracy: 0.93,
        recall: 0.98,
        precision: 0.8909,
        f1: 0.9333,
        fpr: 0.12,
    },
    PublishedRow {
        model: "llama4-scout",
        mode: "w/",
        accuracy: 0.97,
        recall: 0.98,
        precision: 0.9608,
        f1: 0.9703,
        fpr: 0.04,
    },
    PublishedRow {
        model: "deepseek-r1",
        mode: "w/o",
        accuracy: 0.89,
        recall: 1.0,
        precision: 0.8197,
        f1: 0.9009,
        fpr: 0.22,
    },
    PublishedRow {
        model: "deepseek-r1",
        mode: "w/",
        accuracy: 0.96,
        recall: 0.98,
        precision: 0.9423,
        f1: 0.9608,
        fpr: 0.06,
    },
    PublishedRow {
        model: "mistral-saba",
        mode: "w/o",
        accuracy: 0.822,
        recall: 1.0,
        precision: 0.7375,
        f1: 0.8489,
        fpr: 0.356,
    },
    PublishedRow {
        model: "mistral-saba",
        mode: "w/",
        accuracy: 0.95,
        recall: 1.0,
        precision: 0.9091,
        f1: 0.9524,
        fpr: 0.10,
    },
    PublishedRow {
        model: "gemma2-9b",
        mode: "w/o",
        accuracy: 0.80,
        recall: 1.0,
        precision: 0.7143,
        f1: 0.8333,
        fpr: 0.40,
    },
    PublishedRow {
        model: "gemma2-9b",
        mode: "w/",
        accuracy: 0.84,
        recall: 1.0,
        precision: 0.7576,
        f1: 0.8621,
        fpr: 0.32,
    },
];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn published_arithmetic() -> Outcome {
    for row in &PUBLISHED {
        let m = ConfusionMatrix::from_rates(row.recall, row.fpr, 250, 250);
        ensure!(
            m.total() == 500,
            "{} {}: matrix {m:?} does not cover 500 emails",
            row.model,
            row.mode
        );
        let got: Metrics = compute_metrics(&m);
        let want = [row.accuracy, row.recall, row.precision, row.f1, row.fpr];
        for (name, (g, w)) in ["accuracy", "recall", "precision", "f1", "fpr"]
            .iter()
            .zip(got.values().iter().zip(want))
        {
            let g = g.ok_or_else(|| format!("{} {} {name}: undefined", row.model, row.mode))?;
            ensure!(
                round4(g) == round4(w),
                "{} {} {name}: recomputed {g:.4}, published {w:.4} ({m:?})",
                row.model,
                row.mode
            );
        }
    }
    Ok("8 rows, 40 cells match to 4 decimals".into())
}

// 2 --------------------------------------------------------------------------

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Ok(u) = l2_normalize(&EmbeddingVector::new(v).unwrap()) {
            return u;
        }
    }
}

fn brute_force(entries: &[(String, Vec<f64>)], q: &[f64], k: usize, exclude: &HashSet<String>) -> Vec<String> {
    // Stored vectors are single precision; scores are accumulated in f64.
    let mut scored: Vec<(f64, usize)> = entries
        .iter()
        .enumerate()
        .filter(|(_, (id, _))| !exclude.contains(id))
        .map(|(i, (_, v))| (v.iter().zip(q).map(|(&a, &b)| f64::from(a as f32) * b).sum(), i))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| entries[i].0.clone()).collect()
}

fn knn_exactness() -> Outcome {
    const DIM: usize = 384;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b6e6e);
    let mut searches = 0;
    for trial in 0..200 {
        let n = rng.gen_range(1..=1000);
        let mut index = FlatIndex::new(DIM);
        let mut entries: Vec<(String, Vec<f64>)> = Vec::with_capacity(n);
        for i in 0..n {
            // Every tenth entry repeats an earlier vector to exercise ties.
            let v = if i > 0 && i % 10 == 0 {
                let j = rng.gen_range(0..i);
                EmbeddingVector::new(entries[j].1.clone()).unwrap()
            } else {
                random_unit(&mut rng, DIM)
            };
            let id = format!("t{trial}-e{i}");
            index
                .add(IndexEntry {
                    email_id: id.clone(),
                    vector: v.clone(),
                    label: None,
                })
                .map_err(|e| format!("trial {trial}: add failed: {e}"))?;
            entries.push((id, v.values().to_vec()));
        }
        for k in [1, 5, 10] {
            for with_exclusion in [false, true] {
                let q = if rng.gen_bool(0.3) {
                    EmbeddingVector::new(entries[rng.gen_range(0..n)].1.clone()).unwrap()
                } else {
                    random_unit(&mut rng, DIM)
                };
                let exclude: HashSet<String> = if with_exclusion {
                    entries
                        .iter()
                        .filter(|_| rng.gen_bool(0.2))
                        .map(|(id, _)| id.clone())
                        .collect()
                } else {
                    HashSet::new()
                };
                let got: Vec<String> = index
                    .search(&q, k, &exclude)
                    .map_err(|e| format!("trial {trial}: search failed: {e}"))?
                    .into_iter()
                    .map(|h| h.email_id)
                    .collect();
                let want = brute_force(&entries, q.values(), k, &exclude);
                ensure!(
                    got == want,
                    "trial {trial} (n={n}, k={k}): index {got:?} vs oracle {want:?}"
                );
                searches += 1;
            }
        }
    }
    Ok(format!("200 indexes, {searches} searches identical to brute force"))
}

// 3 --------------------------------------------------------------------------

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    let scale = 10f64.powi(rng.gen_range(-3..=3));
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0) * scale
                }
            })
            .collect();
        if v.iter().any(|&x| x != 0.0) {
            return EmbeddingVector::new(v).unwrap();
        }
    }
}

fn embedding_invariants() -> Outcome {
    const CASES: usize = 10_000;
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(0xe3b);
    let err = |e: phishguard_core::embedding::EmbeddingError| e.to_string();
    for case in 0..CASES {
        let dim = rng.gen_range(1..=512);
        let a = random_vector(&mut rng, dim);
        let b = random_vector(&mut rng, dim);

        let n1 = l2_normalize(&a).map_err(err)?;
        let n2 = l2_normalize(&n1).map_err(err)?;
        ensure!(
            (n1.norm() - 1.0).abs() <= 1e-6,
            "case {case}: normalized norm {}",
            n1.norm()
        );
        let drift = n1
            .values()
            .iter()
            .zip(n2.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        ensure!(drift <= TOL, "case {case}: normalize not idempotent (drift {drift:e})");

        let ab = cosine_similarity(&a, &b).map_err(err)?;
        let ba = cosine_similarity(&b, &a).map_err(err)?;
        ensure!((ab - ba).abs() <= TOL, "case {case}: cosine asymmetric {ab} vs {ba}");
        ensure!((-1.0..=1.0).contains(&ab), "case {case}: cosine {ab} out of bounds");

        let alpha = rng.gen_range(1e-3..1e3);
        let scaled = cosine_similarity(&a.scaled(alpha), &b).map_err(err)?;
        ensure!(
            (scaled - ab).abs() <= TOL,
            "case {case}: cosine changed under scaling by {alpha}"
        );

        let (u, v) = (n1, l2_normalize(&b).map_err(err)?);
        let dot = u.dot(&v).map_err(err)?;
        let cos = cosine_similarity(&u, &v).map_err(err)?;
        ensure!((dot - cos).abs() <= TOL, "case {case}: unit dot {dot} vs cosine {cos}");
    }
    Ok(format!(
        "{CASES} cases each for idempotence, symmetry, bounds, scale invariance, unit dot"
    ))
}

// 4 --------------------------------------------------------------------------

fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'Z', 'é', 'ß', 'Ω', '字', '😀', ' ', '\t', '\n', '\r', '\u{a0}', '\u{200b}', '\u{301}', '\u{feff}',
        '.', ',', '!', '@', '-', '"', '<', '>', '&', 'Ⅻ', 'ﬁ', '\u{0}', '\u{7f}', 'İ', '1', '9',
    ];
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| *POOL.choose(rng).unwrap()).collect()
}

fn preprocessing_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e7);

    let eml = |from: &str, body: &str| format!("From: {from}\r\nSubject: s\r\n\r\n{body}\r\n");
    let raw = vec![
        RawEmail::new("a", eml("x@corp.example", "first body")),
        RawEmail::new("b", eml("y@corp.example", "second body")),
        RawEmail::new("c", eml("nobody", "third body")),
    ];
    let mut trace = Vec::new();
    preprocess_corpus_traced(&raw, &mut |id, stage| trace.push((id.to_string(), stage)));
    let order = [Stage::Decode, Stage::Structure, Stage::Normalize, Stage::Validate];
    let want: Vec<(String, Stage)> = ["a", "b", "c"]
        .iter()
        .flat_map(|id| order.iter().map(move |s| (id.to_string(), *s)))
        .collect();
    ensure!(trace == want, "stage trace {trace:?}");

    for case in 0..10_000 {
        let s = random_text(&mut rng, 40);
        let once = normalize_text(&s);
        ensure!(
            normalize_text(&once) == once,
            "case {case}: normalize_text not idempotent on {s:?}"
        );
    }

    let dupes = vec![
        RawEmail::new("first", eml("x@corp.example", "Same  body")),
        RawEmail::new("other", eml("x@corp.example", "different body")),
        RawEmail::new("second", eml("x@corp.example", "same body")),
    ];
    let out = preprocess_corpus(&dupes);
    let ids: Vec<&str> = out.emails.iter().map(|e| e.id.as_str()).collect();
    ensure!(ids == ["first", "other"], "dedup kept {ids:?}");
    ensure!(out.report.dropped_duplicate == 1, "dedup report {:?}", out.report);
    ensure!(
        dedup_key(&out.emails[0]) != dedup_key(&out.emails[1]),
        "distinct emails share a dedup key"
    );

    let table = [
        ("", false),
        ("@", true),
        ("user", false),
        ("user@", true),
        ("@domain", true),
        ("user@domain.example", true),
        ("a@b@c", true),
        ("name <user at domain>", false),
        ("name <user@domain.example>", true),
    ];
    for (sender, want) in table {
        ensure!(validate_sender(sender) == want, "validate_sender({sender:?}) != {want}");
    }

    let ingest = || -> Result<Vec<u8>, String> {
        let raw = read_eml_dir(&fixtures().join("eml")).map_err(|e| e.to_string())?;
        let out = preprocess_corpus(&raw);
        let mut buf = Vec::new();
        write_corpus_jsonl(&mut buf, &out.emails).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let (first, second) = (ingest()?, ingest()?);
    ensure!(first == second, "ingestion differs between runs");
    let golden = std::fs::read(fixtures().join("eml_golden.jsonl")).map_err(|e| e.to_string())?;
    ensure!(first == golden, "ingestion output differs from eml_golden.jsonl");
    Ok(format!(
        "stage order, 10000 idempotence cases, keep-first dedup, {}-row '@' table, 20-file golden byte-identical twice",
        table.len()
    ))
}

// 5 --------------------------------------------------------------------------

fn random_verdict(rng: &mut ChaCha8Rng) -> Verdict {
    let list = |rng: &mut ChaCha8Rng| (0..rng.gen_range(0..4)).map(|_| random_text(rng, 20)).collect();
    let reason = format!("r{}z", random_text(rng, 40));
    Verdict {
        classification_decision: *[Decision::Legitimate, Decision::Phishing].choose(rng).unwrap(),
        phishing_score: rng.gen_range(0..=10),
        risk: *[Risk::Low, Risk::Medium, Risk::High].choose(rng).unwrap(),
        social_engineering_elements: list(rng),
        recommended_actions: list(rng),
        brief_reason: reason,
    }
}

fn verdict_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e4d);
    for case in 0..1000 {
        let v = random_verdict(&mut rng);
        let rendered = v.render();
        let parsed = parse_verdict(&rendered).map_err(|e| format!("case {case}: {e} on {rendered}"))?;
        ensure!(parsed == v, "case {case}: round trip changed {v:?} into {parsed:?}");
    }

    match parse_verdict("I cannot determine whether this email is phishing.") {
        Err(VerdictError::NoJsonFound { .. }) => {}
        other => return Err(format!("prose without JSON gave {other:?}")),
    }

    let plain = r#"{"classification_decision":"phishing","phishing_score":8,"risk":"high","social_engineering_elements":["urgency"],"recommended_actions":["do not click"],"brief_reason":"spoofed bank domain"}"#;
    let fenced = format!("Here is my analysis:\n```json\n{plain}\n```\n");
    let (a, b) = (parse_verdict(plain), parse_verdict(&fenced));
    ensure!(a.is_ok() && a == b, "fenced JSON parsed differently: {a:?} vs {b:?}");

    let out_of_range = plain.replace("\"phishing_score\":8", "\"phishing_score\":11");
    match parse_verdict(&out_of_range) {
        Err(VerdictError::SchemaViolation {
            field: "phishing_score",
            reason,
            raw,
        }) if reason == "out of range" && raw == out_of_range => {}
        other => return Err(format!("score 11 gave {other:?}")),
    }
    Ok("1000 round trips; no-JSON, fenced and out-of-range cases as specified".into())
}

// 6 and 7 --------------------------------------------------------------------

const CLUSTER_TOKENS: [&str; 2] = ["zorvex", "kelbrin"];
const UNIQUE_TOKENS: [&str; 10] = [
    "larkspur",
    "mandolin",
    "nectarine",
    "obsidian",
    "pelican",
    "quasar",
    "rhubarb",
    "saffron",
    "tamarind",
    "umberwood",
];
const FILLER: [&str; 24] = [
    "agenda",
    "budget",
    "calendar",
    "draft",
    "estimate",
    "forecast",
    "garden",
    "harbor",
    "inventory",
    "journal",
    "kitchen",
    "lecture",
    "minutes",
    "notebook",
    "office",
    "parking",
    "quarter",
    "roster",
    "seminar",
    "timesheet",
    "uniform",
    "vacation",
    "workshop",
    "yearbook",
];
const EVIL_DOMAIN: &str = "evil-bank.test";
const PHISH_REPLY: &str = r#"{"classification_decision":"phishing","phishing_score":9,"risk":"high","social_engineering_elements":["suspicious token"],"recommended_actions":["report"],"brief_reason":"flagged by rule table"}"#;
const LEGIT_REPLY: &str = r#"{"classification_decision":"legitimate","phishing_score":1,"risk":"low","social_engineering_elements":[],"recommended_actions":[],"brief_reason":"no rule fired"}"#;

/// Which suspicious token, if any, a synthetic legitimate email carries, and
/// whether other emails share it.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Group {
    Plain,
    Cluster(usize),
    Unique(usize),
}

struct Synthetic {
    corpus: Vec<CleanEmail>,
    groups: BTreeMap<String, Group>,
}

fn synthetic_corpus() -> Synthetic {
    let mut corpus = Vec::new();
    let mut groups = BTreeMap::new();
    for i in 0..100 {
        let id = format!("legit-{i:03}");
        let filler: Vec<&str> = (0..5).map(|j| FILLER[(i * 7 + j * 5) % FILLER.len()]).collect();
        let (group, subject, sender, body) = match i {
            0..=19 => {
                let t = CLUSTER_TOKENS[i / 10];
                (
                    Group::Cluster(i / 10),
                    format!("{t} depot reconciliation"),
                    "depot@corp.example".to_string(),
                    format!("{t} ledger reconciliation for the northern depot shipment batch {i} signed off"),
                )
            }
            20..=29 => {
                let t = UNIQUE_TOKENS[i - 20];
                (
                    Group::Unique(i - 20),
                    format!("{} item {i}", filler[0]),
                    format!("staff{i}@corp.example"),
                    format!(
                        "{t} {} {} {} {} reference {i}",
                        filler[1], filler[2], filler[3], filler[4]
                    ),
                )
            }
            _ => (
                Group::Plain,
                format!("{} item {i}", filler[0]),
                format!("staff{i}@corp.example"),
                format!("{} {} {} {} reference {i}", filler[1], filler[2], filler[3], filler[4]),
            ),
        };
        groups.insert(id.clone(), group);
        corpus.push(labeled(&id, &subject, &sender, &body, Label::Legitimate));
    }
    for i in 0..100 {
        corpus.push(labeled(
            &format!("phish-{i:03}"),
            "account locked",
            &format!("alerts@{EVIL_DOMAIN}"),
            &format!("your account is locked, confirm your identity at http://{EVIL_DOMAIN}/login/{i} today"),
            Label::Phishing,
        ));
    }
    Synthetic { corpus, groups }
}

fn synthetic_rules() -> Vec<Rule> {
    let mut rules = vec![Rule::new(Matcher::Contains("malicious=60".into()), PHISH_REPLY)];
    for t in CLUSTER_TOKENS.iter().chain(&UNIQUE_TOKENS) {
        rules.push(Rule::new(
            Matcher::All(vec![
                Matcher::EmailContains(t.to_string()),
                Matcher::Not(Box::new(Matcher::ContextEntries {
                    with: t.to_string(),
                    at_least: 3,
                })),
            ]),
            PHISH_REPLY,
        ));
    }
    rules.push(Rule::new(Matcher::Default, LEGIT_REPLY));
    rules
}

fn synthetic_threat() -> Arc<ReputationClient> {
    let fixture =
        format!(r#"{{"{EVIL_DOMAIN}": {{"malicious": 60, "harmless": 5, "undetected": 10, "engines_total": 75}}}}"#);
    Arc::new(ReputationClient::new(
        Source::fixture_from_json(&fixture).expect("fixture parses"),
        ReputationConfig::default(),
    ))
}

/// Expected false positives per mode, from the rule table alone: every
/// held-out legitimate email carrying a token trips its rule without context;
/// with k=5 retrieval a cluster email is cleared exactly when at least three
/// of its cluster mates sit in the training half, and a unique-token email is
/// never cleared.
fn enumerate_expected(synth: &Synthetic, split: &SplitSpec, k: usize) -> Result<(u64, u64, u64), String> {
    let (train, test) = phishguard_core::eval::stratified_split(&synth.corpus, split).map_err(|e| e.to_string())?;
    let mut mates_in_train = [0usize; 2];
    for e in &train {
        if let Some(Group::Cluster(c)) = synth.groups.get(&e.id) {
            mates_in_train[*c] += 1;
        }
    }
    let (mut negatives, mut fp_off, mut fp_on) = (0, 0, 0);
    for e in test.iter().filter(|e| e.label == Some(Label::Legitimate)) {
        negatives += 1;
        match synth.groups[&e.id] {
            Group::Plain => {}
            Group::Unique(_) => {
                fp_off += 1;
                fp_on += 1;
            }
            Group::Cluster(c) => {
                fp_off += 1;
                if mates_in_train[c].min(k) < 3 {
                    fp_on += 1;
                }
            }
        }
    }
    Ok((negatives, fp_off, fp_on))
}

fn scripted_gateway(rules: Vec<Rule>) -> Arc<Gateway> {
    let backend = ScriptedBackend::new(rules).expect("rules include a default");
    Arc::new(Gateway::with_limits(Arc::new(backend), RetryPolicy::immediate(0), 8))
}

fn synthetic_experiment() -> Outcome {
    let synth = synthetic_corpus();
    let config = MatrixConfig::default();
    let (negatives, fp_off, fp_on) = enumerate_expected(&synth, &config.split, config.k)?;
    ensure!(
        fp_on < fp_off,
        "corpus design does not separate the modes ({fp_off} vs {fp_on})"
    );

    let models = registry_default();
    let report = run_matrix(
        &synth.corpus,
        &models,
        &[RagMode::Norag, RagMode::Rag],
        Arc::new(HashEmbedder::default()),
        scripted_gateway(synthetic_rules()),
        Some(synthetic_threat()),
        &config,
    )
    .map_err(|e| e.to_string())?;

    let want_off = fp_off as f64 / negatives as f64;
    let want_on = fp_on as f64 / negatives as f64;
    for m in &models {
        let off = report.cell(&m.key, RagMode::Norag).ok_or("missing rag-off cell")?;
        let on = report.cell(&m.key, RagMode::Rag).ok_or("missing rag-on cell")?;
        ensure!(off.is_complete() && on.is_complete(), "{}: incomplete cells", m.key);
        ensure!(
            off.fallback_count == 0 && on.fallback_count == 0,
            "{}: fallback verdicts used",
            m.key
        );
        ensure!(
            off.matrix.fp == fp_off && on.matrix.fp == fp_on,
            "{}: fp {} / {} vs enumerated {fp_off} / {fp_on}",
            m.key,
            off.matrix.fp,
            on.matrix.fp
        );
        ensure!(
            off.metrics.fpr == Some(want_off) && on.metrics.fpr == Some(want_on),
            "{}: fpr {:?} / {:?}",
            m.key,
            off.metrics.fpr,
            on.metrics.fpr
        );
        ensure!(
            on.metrics.fpr < off.metrics.fpr,
            "{}: retrieval did not lower the false-positive rate",
            m.key
        );
        ensure!(
            off.metrics.recall == on.metrics.recall,
            "{}: recall changed {:?} -> {:?}",
            m.key,
            off.metrics.recall,
            on.metrics.recall
        );
    }
    Ok(format!(
        "FPR rag off {want_off:.4} -> rag on {want_on:.4} (fp {fp_off} -> {fp_on} of {negatives}), recall unchanged, all {} models",
        models.len()
    ))
}

fn leakage_guards() -> Outcome {
    let synth = synthetic_corpus();
    let config = MatrixConfig {
        parallelism: 2,
        ..MatrixConfig::default()
    };
    let report = run_matrix(
        &synth.corpus,
        &registry_default()[..1],
        &[RagMode::Rag],
        Arc::new(HashEmbedder::default()),
        scripted_gateway(synthetic_rules()),
        None,
        &config,
    )
    .map_err(|e| e.to_string())?;
    let manifest = report.manifest.as_ref().ok_or("no index manifest")?;
    let indexed: HashSet<&str> = manifest.index_ids.iter().map(String::as_str).collect();
    let leaked: Vec<&String> = manifest
        .evaluated_ids
        .iter()
        .filter(|id| indexed.contains(id.as_str()))
        .collect();
    ensure!(
        leaked.is_empty() && manifest.leaked_ids.is_empty(),
        "test ids in index: {leaked:?}"
    );
    ensure!(
        !manifest.index_ids.is_empty() && !manifest.evaluated_ids.is_empty(),
        "degenerate manifest"
    );

    let embedder = Arc::new(HashEmbedder::default());
    let docs: Vec<CleanEmail> = synth
        .corpus
        .iter()
        .filter(|e| e.label == Some(Label::Legitimate))
        .cloned()
        .collect();
    let mut index = FlatIndex::new(embedder.dim());
    for d in &docs {
        let v =
            l2_normalize(&embed_email(embedder.as_ref(), d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        index
            .add(IndexEntry {
                email_id: d.id.clone(),
                vector: v,
                label: d.label,
            })
            .map_err(|e| e.to_string())?;
    }
    let planted = docs[0].clone();
    let engine = Engine::builder(
        embedder,
        scripted_gateway(synthetic_rules()),
        registry_default()[0].clone(),
    )
    .index(index, docs)
    .build();
    let hits = |exclude_self: bool| -> Result<Vec<String>, String> {
        let opts = ClassifyOptions {
            threat: false,
            exclude_self,
            ..ClassifyOptions::default()
        };
        let r = engine.classify(&planted, &opts).map_err(|e| e.to_string())?;
        Ok(r.context_ids.into_iter().map(|h| h.email_id).collect())
    };
    let included = hits(false)?;
    ensure!(
        included.first() == Some(&planted.id),
        "planted entry not retrieved first without exclusion: {included:?}"
    );
    let excluded = hits(true)?;
    ensure!(
        !excluded.contains(&planted.id),
        "exclude_self kept the planted entry: {excluded:?}"
    );
    ensure!(excluded.len() == included.len(), "exclusion shortened the context");
    Ok(format!(
        "{} evaluated ids disjoint from {} indexed ids; planted self-entry removed",
        manifest.evaluated_ids.len(),
        manifest.index_ids.len()
    ))
}

// 8 --------------------------------------------------------------------------

fn live_smoke() -> Result<Status, String> {
    let config = match RemoteConfig::from_env() {
        Ok(c) => c,
        Err(_) => return Ok(Status::Skip("LLM_API_KEY not set".into())),
    };
    let registry = Registry::from_env();
    let key = std::env::var("PHISHGUARD_SMOKE_MODEL").unwrap_or_else(|_| "llama4-scout".into());
    let model = registry.lookup(&key).map_err(|e| e.to_string())?.clone();
    let backend = RemoteBackend::new(config).map_err(|e| e.to_string())?;
    let gateway = Arc::new(Gateway::new(Arc::new(backend)));

    let raw = read_eml_dir(&fixtures().join("samples")).map_err(|e| e.to_string())?;
    let samples = preprocess_corpus(&raw).emails;
    ensure!(
        samples.len() == 5,
        "expected 5 bundled samples, found {}",
        samples.len()
    );
    let history = preprocess_corpus(&read_eml_dir(&fixtures().join("eml")).map_err(|e| e.to_string())?).emails;
    let embedder = Arc::new(HashEmbedder::default());
    let mut index = FlatIndex::new(embedder.dim());
    for d in &history {
        let v =
            l2_normalize(&embed_email(embedder.as_ref(), d).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        index
            .add(IndexEntry {
                email_id: d.id.clone(),
                vector: v,
                label: None,
            })
            .map_err(|e| e.to_string())?;
    }
    let engine = Engine::builder(embedder, gateway, model)
        .index(index, history)
        .threat_client(synthetic_threat())
        .fallback(false)
        .build();

    let all_stages = [
        PipelineStage::Embed,
        PipelineStage::Retrieve,
        PipelineStage::Threat,
        PipelineStage::Prompt,
        PipelineStage::Complete,
        PipelineStage::Parse,
    ];
    for email in &samples {
        let r = engine
            .classify(email, &ClassifyOptions::default())
            .map_err(|e| format!("{}: {e}", email.id))?;
        ensure!(!r.fallback_used, "{}: fallback verdict", email.id);
        let reparsed = parse_verdict(&r.verdict.render()).map_err(|e| format!("{}: {e}", email.id))?;
        ensure!(
            reparsed == r.verdict && r.verdict.phishing_score <= 10,
            "{}: verdict not schema-valid",
            email.id
        );
        let stages: HashSet<PipelineStage> = r.timings.iter().map(|t| t.stage).collect();
        ensure!(
            all_stages.iter().all(|s| stages.contains(s)),
            "{}: timings {:?}",
            email.id,
            r.timings
        );
    }
    Ok(Status::Pass(format!(
        "{} samples classified against {key}",
        samples.len()
    )))
}

// ----------------------------------------------------------------------------

fn run(budget: Option<Duration>, f: impl FnOnce() -> Result<Status, String>) -> (Status, Duration) {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let status = match outcome {
        Ok(Ok(Status::Pass(detail))) => match budget {
            Some(b) if elapsed > b => Status::Fail(format!("{detail}, but took longer than {b:?}")),
            _ => Status::Pass(detail),
        },
        Ok(Ok(other)) => other,
        Ok(Err(reason)) => Status::Fail(reason),
        Err(p) => Status::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    };
    (status, elapsed)
}

fn main() {
    let pass = |f: fn() -> Outcome| move || f().map(Status::Pass);
    let secs = Duration::from_secs;
    let criteria: Vec<Criterion> = vec![
        (
            "published metric arithmetic",
            Some(secs(1)),
            Box::new(pass(published_arithmetic)),
        ),
        ("knn exactness", Some(secs(30)), Box::new(pass(knn_exactness))),
        (
            "embedding invariants",
            Some(secs(10)),
            Box::new(pass(embedding_invariants)),
        ),
        ("preprocessing determinism", None, Box::new(pass(preprocessing_laws))),
        ("verdict round trip", None, Box::new(pass(verdict_round_trip))),
        (
            "synthetic retrieval benefit",
            Some(secs(60)),
            Box::new(pass(synthetic_experiment)),
        ),
        ("leakage guards", None, Box::new(pass(leakage_guards))),
        ("live smoke test", None, Box::new(live_smoke)),
    ];
    let mut failed = 0;
    for (n, (name, budget, f)) in criteria.into_iter().enumerate() {
        let (status, elapsed) = run(budget, f);
        let (tag, detail) = match status {
            Status::Pass(d) => ("PASS", d),
            Status::Skip(d) => ("SKIP", d),
            Status::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {} {name}: {tag} ({detail}; {:.2}s)",
            n + 1,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
