use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest, LlmError, ModelSpec};
use crate::prompt::split_rendered;

/// Predicate over the rendered user prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Default,
    /// Substring anywhere in the prompt.
    Contains(String),
    /// Substring inside the query email block only.
    EmailContains(String),
    /// At least `at_least` retrieved context entries contain `with`.
    ContextEntries {
        with: String,
        at_least: usize,
    },
    /// Substring in the prompt sent to this model key.
    Model(String),
    All(Vec<Matcher>),
    Any(Vec<Matcher>),
    Not(Box<Matcher>),
}

impl Matcher {
    fn matches(&self, model: &ModelSpec, prompt: &str) -> bool {
        match self {
            Matcher::Default => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::EmailContains(s) => split_rendered(prompt).is_some_and(|p| p.email.contains(s.as_str())),
            Matcher::ContextEntries { with, at_least } => {
                let hits = split_rendered(prompt).map_or(0, |p| {
                    p.context_entries.iter().filter(|e| e.contains(with.as_str())).count()
                });
                hits >= *at_least
            }
            Matcher::Model(key) => model.key == *key,
            Matcher::All(ms) => ms.iter().all(|m| m.matches(model, prompt)),
            Matcher::Any(ms) => ms.iter().any(|m| m.matches(model, prompt)),
            Matcher::Not(m) => !m.matches(model, prompt),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub when: Matcher,
    pub respond: String,
}

impl Rule {
    pub fn new(when: Matcher, respond: impl Into<String>) -> Self {
        Self {
            when,
            respond: respond.into(),
        }
    }
}

/// Offline backend answering from an ordered rule table; first match wins.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<Rule>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<Rule>) -> Result<Self, LlmError> {
        if !rules.iter().any(|r| r.when == Matcher::Default) {
            return Err(LlmError::NoDefaultRule);
        }
        Ok(Self {
            rules,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let rules: Vec<Rule> = serde_json::from_str(text).map_err(|e| LlmError::InvalidRules(e.to_string()))?;
        Self::new(rules)
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LlmError::InvalidRules(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn respond(&self, model: &ModelSpec, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|r| r.when.matches(model, prompt))
            .map(|r| r.respond.as_str())
            .expect("a default rule always matches")
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, model: &ModelSpec, req: &ChatRequest) -> Result<BackendReply, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(BackendReply {
            text: self.respond(model, &req.user_message).to_string(),
            usage: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::email::CleanEmail;
    use crate::llm::Registry;
    use crate::prompt::{build_prompt, Context, DEFAULT_BUDGET_CHARS};

    const PHISH: &str = r#"{"classification_decision":"phishing"}"#;
    const LEGIT: &str = r#"{"classification_decision":"legitimate"}"#;

    fn model() -> ModelSpec {
        Registry::default().lookup("llama4-scout").unwrap().clone()
    }

    fn rules() -> Vec<Rule> {
        vec![
            Rule::new(Matcher::Contains("evil.test".into()), PHISH),
            Rule::new(Matcher::Default, LEGIT),
        ]
    }

    #[test]
    fn first_match_wins() {
        let b = ScriptedBackend::new(rules()).unwrap();
        assert_eq!(b.respond(&model(), "click https://evil.test/login"), PHISH);
        assert_eq!(b.respond(&model(), "lunch on friday?"), LEGIT);
        let req = ChatRequest::new("see evil.test");
        assert_eq!(
            b.send(&model(), &req).unwrap().text,
            b.send(&model(), &req).unwrap().text
        );
        assert_eq!(b.call_count(), 2);
    }

    #[test]
    fn default_required() {
        assert_eq!(
            ScriptedBackend::new(vec![Rule::new(Matcher::Contains("x".into()), PHISH)]).unwrap_err(),
            LlmError::NoDefaultRule
        );
    }

    #[test]
    fn json_rule_file() {
        let text = r#"[
            {"when": {"all": [{"email_contains": "wire"}, {"not": {"context_entries": {"with": "wire", "at_least": 2}}}]}, "respond": "P"},
            {"when": {"model": "gemma2-9b"}, "respond": "G"},
            {"when": "default", "respond": "L"}
        ]"#;
        let b = ScriptedBackend::from_json(text).unwrap();
        assert_eq!(b.rules().len(), 3);
        assert!(matches!(
            ScriptedBackend::from_json("[{\"when\":\"sometimes\",\"respond\":\"x\"}]"),
            Err(LlmError::InvalidRules(_))
        ));

        let q = CleanEmail::from_fields("q", "payment", "a@b.example", "please send the wire today").unwrap();
        let history: Vec<CleanEmail> = (0..3)
            .map(|i| {
                CleanEmail::from_fields(format!("h{i}"), "payment", "a@b.example", "monthly wire to supplier").unwrap()
            })
            .collect();
        let m = model();
        let without = build_prompt(&q, Context::Disabled, None, DEFAULT_BUDGET_CHARS).unwrap();
        assert_eq!(b.respond(&m, &without.rendered), "P");
        let one = build_prompt(&q, Context::Retrieved(&history[..1]), None, DEFAULT_BUDGET_CHARS).unwrap();
        assert_eq!(b.respond(&m, &one.rendered), "P");
        let with = build_prompt(&q, Context::Retrieved(&history), None, DEFAULT_BUDGET_CHARS).unwrap();
        assert_eq!(b.respond(&m, &with.rendered), "L");
        let gemma = Registry::default().lookup("gemma2-9b").unwrap().clone();
        assert_eq!(b.respond(&gemma, &with.rendered), "G");
    }
}
