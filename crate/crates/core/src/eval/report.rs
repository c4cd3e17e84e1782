use std::fmt::Write as _;
use std::path::Path;

use super::{CellReport, EvalError, EvalReport, RagMode};

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "recall", "precision", "f1", "fpr"];
const METRIC_HEADINGS: [&str; 5] = ["Accuracy", "Recall", "Precision", "F1", "FPR"];
const MISSING: &str = "—";

fn usable(cell: Option<&CellReport>) -> Option<&CellReport> {
    cell.filter(|c| c.is_complete() && c.n > 0)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x:.4}"))
}

/// One row per model; each metric gets a without/with retrieval column
/// pair. Absent or incomplete cells show as a dash.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::from("| Model |");
    for h in METRIC_HEADINGS {
        let _ = write!(out, " {h} w/o | {h} w/ |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(10));
    out.push('\n');
    for model in &report.models {
        let _ = write!(out, "| {model} |");
        let cells = [RagMode::Norag, RagMode::Rag].map(|m| usable(report.cell(model, m)));
        for i in 0..METRIC_NAMES.len() {
            for cell in cells {
                let v = cell.and_then(|c| c.metrics.values()[i]);
                let _ = write!(out, " {} |", fmt_value(v));
            }
        }
        out.push('\n');
    }
    let m = &report.metadata;
    let _ = write!(
        out,
        "\nN = {} evaluated emails per cell (corpus {}, seed {}, train fraction {}, k = {}).\n",
        m.test_size, m.corpus_size, m.seed, m.train_fraction, m.k
    );
    for cell in report.cells.iter().filter(|c| c.fallback_count > 0 || !c.is_complete()) {
        let _ = write!(
            out,
            "\n- {} {}: {} fallback verdicts",
            cell.model_key, cell.mode, cell.fallback_count
        );
        if !cell.is_complete() {
            out.push_str(", incomplete");
        }
    }
    if out.ends_with(|c| c != '\n') {
        out.push('\n');
    }
    out
}

/// `model,mode,metric,value` rows, one per metric of every present cell.
/// Undefined metrics leave the value empty.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("model,mode,metric,value\n");
    for model in &report.models {
        for &mode in &report.modes {
            let Some(cell) = report.cell(model, mode) else { continue };
            for (name, v) in METRIC_NAMES.iter().zip(cell.metrics.values()) {
                let value = if cell.is_complete() {
                    v.map(|x| format!("{x:.6}"))
                } else {
                    None
                };
                let _ = writeln!(out, "{model},{mode},{name},{}", value.unwrap_or_default());
            }
        }
    }
    out
}

pub fn render_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes report.md, report.csv, report.json and index-manifest.json.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("report.md"), render_markdown(report)).map_err(io)?;
    std::fs::write(dir.join("report.csv"), render_csv(report)).map_err(io)?;
    std::fs::write(dir.join("report.json"), render_json(report)).map_err(io)?;
    if let Some(manifest) = &report.manifest {
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
        std::fs::write(dir.join("index-manifest.json"), text).map_err(io)?;
    }
    Ok(())
}
