use std::cmp::Reverse;

use super::{ElementVerdict, LookupFailure, ThreatReport};

pub const EMPTY_SUMMARY: &str = "no domains or urls analyzed";

fn verdict_line(v: &ElementVerdict) -> String {
    let mut line = format!(
        "{} {}: malicious={} suspicious={} harmless={} reputation={} (of {} engines)",
        v.element.kind, v.element.value, v.malicious, v.suspicious, v.harmless, v.reputation, v.engines_total
    );
    if v.not_found {
        line.push_str(" [not found]");
    }
    line
}

fn failure_line(f: &LookupFailure) -> String {
    format!(
        "{} {}: reputation unavailable ({})",
        f.element.kind, f.element.value, f.reason
    )
}

fn render(lines: &[String], kept: usize) -> String {
    let mut out = lines[..kept].join("\n");
    let hidden = lines.len() - kept;
    if hidden > 0 {
        if kept > 0 {
            out.push('\n');
        }
        out.push_str(&format!("(+{hidden} more)"));
    }
    out
}

/// One line per element, most malicious first (ties by value), failed
/// lookups last. Cut at a line boundary so the result fits `max_chars`,
/// with a `(+n more)` marker for the dropped lines.
pub fn summarize_threat(report: &ThreatReport, max_chars: usize) -> String {
    if report.is_empty() {
        return EMPTY_SUMMARY.to_string();
    }
    let mut verdicts: Vec<&ElementVerdict> = report.verdicts.iter().collect();
    verdicts.sort_by_key(|v| (Reverse(v.malicious), v.element.value.as_str()));
    let mut failures: Vec<&LookupFailure> = report.errors.iter().collect();
    failures.sort_by_key(|f| f.element.value.as_str());

    let lines: Vec<String> = verdicts
        .into_iter()
        .map(verdict_line)
        .chain(failures.into_iter().map(failure_line))
        .collect();

    // Rendered length grows with the number of kept lines, so the first
    // count that overflows ends the search.
    let mut best = render(&lines, 0);
    for kept in 1..=lines.len() {
        let candidate = render(&lines, kept);
        if candidate.chars().count() > max_chars {
            break;
        }
        best = candidate;
    }
    if best.chars().count() > max_chars {
        best = best.chars().take(max_chars).collect();
    }
    best
}
