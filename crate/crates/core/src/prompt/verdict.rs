use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Legitimate,
    Phishing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Risk {
    Low,
    Medium,
    High,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Legitimate => "legitimate",
            Decision::Phishing => "phishing",
        })
    }
}

/// The structured answer expected from the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub classification_decision: Decision,
    pub phishing_score: u8,
    pub risk: Risk,
    pub social_engineering_elements: Vec<String>,
    pub recommended_actions: Vec<String>,
    pub brief_reason: String,
}

pub const FAIL_CLOSED_REASON: &str = "model output unparseable — failing closed";

impl Verdict {
    /// Protective default used when the model never produced a usable answer.
    pub fn fail_closed() -> Self {
        Self {
            classification_decision: Decision::Phishing,
            phishing_score: 5,
            risk: Risk::Medium,
            social_engineering_elements: Vec::new(),
            recommended_actions: Vec::new(),
            brief_reason: FAIL_CLOSED_REASON.to_string(),
        }
    }

    pub fn render(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum VerdictError {
    #[error("no JSON object found in model output")]
    NoJsonFound { raw: String },
    #[error("field {field}: {reason}")]
    SchemaViolation {
        field: &'static str,
        reason: String,
        raw: String,
    },
}

impl VerdictError {
    pub fn raw(&self) -> &str {
        match self {
            VerdictError::NoJsonFound { raw } | VerdictError::SchemaViolation { raw, .. } => raw,
        }
    }
}

/// First JSON object embedded anywhere in `raw`.
fn first_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

struct Fields<'a> {
    map: HashMap<String, &'a Value>,
    raw: &'a str,
}

impl<'a> Fields<'a> {
    fn violation(&self, field: &'static str, reason: impl Into<String>) -> VerdictError {
        VerdictError::SchemaViolation {
            field,
            reason: reason.into(),
            raw: self.raw.to_string(),
        }
    }

    fn get(&self, field: &'static str) -> Option<&'a Value> {
        self.map.get(field).copied().filter(|v| !v.is_null())
    }

    fn string(&self, field: &'static str) -> Result<&'a str, VerdictError> {
        match self.get(field) {
            None => Err(self.violation(field, "missing")),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(self.violation(field, "not a string")),
        }
    }

    fn enumerated<T>(&self, field: &'static str, options: &[(&str, T)]) -> Result<T, VerdictError>
    where
        T: Copy,
    {
        let s = self.string(field)?.trim().to_lowercase();
        options
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.violation(field, format!("unknown value {s:?}")))
    }

    fn score(&self, field: &'static str) -> Result<u8, VerdictError> {
        let number = match self.get(field) {
            None => return Err(self.violation(field, "missing")),
            Some(Value::Number(n)) => n.as_f64(),
            Some(Value::String(s)) => s.trim().parse::<f64>().ok(),
            Some(_) => None,
        };
        let n = number.ok_or_else(|| self.violation(field, "not a number"))?;
        if n.fract() != 0.0 {
            return Err(self.violation(field, "not an integer"));
        }
        if !(0.0..=10.0).contains(&n) {
            return Err(self.violation(field, "out of range"));
        }
        Ok(n as u8)
    }

    fn list(&self, field: &'static str) -> Result<Vec<String>, VerdictError> {
        match self.get(field) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(self.violation(field, "list items must be strings")),
                })
                .collect(),
            Some(_) => Err(self.violation(field, "not a list")),
        }
    }
}

/// Extracts and validates the verdict object from free-form model output.
/// Surrounding prose, code fences and a leading `<think>` trace are ignored,
/// key and enum casing is folded, and a numeric-string score is accepted.
pub fn parse_verdict(raw: &str) -> Result<Verdict, VerdictError> {
    let answer = raw.rsplit_once("</think>").map_or(raw, |(_, rest)| rest);
    let object = first_object(answer).ok_or_else(|| VerdictError::NoJsonFound { raw: raw.to_string() })?;
    let fields = Fields {
        map: object.iter().map(|(k, v)| (k.to_lowercase(), v)).collect(),
        raw,
    };

    let brief_reason = fields.string("brief_reason")?.trim().to_string();
    if brief_reason.is_empty() {
        return Err(fields.violation("brief_reason", "empty"));
    }
    Ok(Verdict {
        classification_decision: fields.enumerated(
            "classification_decision",
            &[("legitimate", Decision::Legitimate), ("phishing", Decision::Phishing)],
        )?,
        phishing_score: fields.score("phishing_score")?,
        risk: fields.enumerated(
            "risk",
            &[("low", Risk::Low), ("medium", Risk::Medium), ("high", Risk::High)],
        )?,
        social_engineering_elements: fields.list("social_engineering_elements")?,
        recommended_actions: fields.list("recommended_actions")?,
        brief_reason,
    })
}

/// Flags verdicts whose fields disagree. The decision stays authoritative.
pub fn consistency_check(v: &Verdict) -> Vec<String> {
    let mut warnings = Vec::new();
    if v.classification_decision == Decision::Phishing && v.phishing_score <= 3 {
        warnings.push(format!("decision is phishing but score is only {}", v.phishing_score));
    }
    if v.classification_decision == Decision::Legitimate && v.phishing_score >= 7 {
        warnings.push(format!("decision is legitimate but score is {}", v.phishing_score));
    }
    if v.classification_decision == Decision::Legitimate && v.risk == Risk::High {
        warnings.push("decision is legitimate but risk is high".to_string());
    }
    warnings
}
