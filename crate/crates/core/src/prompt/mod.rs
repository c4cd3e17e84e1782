//! Classification prompt assembly and verdict parsing.

mod verdict;

pub use verdict::{consistency_check, parse_verdict, Decision, Risk, Verdict, VerdictError, FAIL_CLOSED_REASON};

use serde::Serialize;

use crate::email::CleanEmail;

pub const TEMPLATE_V1: &str = include_str!("../../templates/classify_v1.txt");

pub const SYSTEM_MESSAGE: &str = "You are a cybersecurity expert specialized in phishing detection. \
Always respond with a single JSON object matching the requested schema.";

/// Roughly 6000 tokens at four characters per token.
pub const DEFAULT_BUDGET_CHARS: usize = 24_000;
pub const EXCERPT_CHARS: usize = 500;

pub const EMAIL_HEADING: &str = "Email to analyze:";
pub const EMAIL_END: &str = "[End of email]";
pub const CONTEXT_HEADING: &str = "Known legitimate emails for this user:";
pub const ENTRY_MARKER: &str = "[Known legitimate email ";
pub const CONTEXT_END: &str = "[End of known legitimate emails]";
pub const THREAT_HEADING: &str = "Reputation of the sender domain and linked URLs:";
pub const NONE_AVAILABLE: &str = "none available";
pub const NO_HISTORY: &str = "no historical emails available";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("fixed prompt blocks need {needed} chars but the budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("template is missing placeholder {0}")]
    MissingPlaceholder(&'static str),
}

/// Retrieved history handed to the prompt.
#[derive(Clone, Copy, Debug)]
pub enum Context<'a> {
    /// Retrieval is switched off for this run.
    Disabled,
    /// Retrieval ran; entries are in rank order and may be empty.
    Retrieved(&'a [CleanEmail]),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub role_block: String,
    pub email_block: String,
    pub context_block: String,
    pub threat_block: String,
    pub output_spec_block: String,
    pub rendered: String,
    pub system_message: String,
}

/// A template split at its `{email}`, `{context}` and `{threat}` slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    role: String,
    after_email: String,
    after_context: String,
    output_spec: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let split = |s: &str, slot: &'static str| -> Result<(String, String), PromptError> {
            s.split_once(slot)
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or(PromptError::MissingPlaceholder(slot))
        };
        let (role, rest) = split(text, "{email}")?;
        let (after_email, rest) = split(&rest, "{context}")?;
        let (after_context, output_spec) = split(&rest, "{threat}")?;
        Ok(Self {
            role,
            after_email,
            after_context,
            output_spec,
        })
    }

    pub fn v1() -> Self {
        Self::parse(TEMPLATE_V1).expect("bundled template has all slots")
    }

    /// Renders the five blocks. When the result is over `budget` chars,
    /// context excerpts are shortened longest first, then the tail of the
    /// query body. Role and output blocks are never touched.
    pub fn build(
        &self,
        email: &CleanEmail,
        context: Context<'_>,
        threat: Option<&str>,
        budget: usize,
    ) -> Result<PromptBundle, PromptError> {
        let entries: &[CleanEmail] = match context {
            Context::Disabled => &[],
            Context::Retrieved(e) => e,
        };
        let full = Lengths {
            body: email.body.chars().count(),
            excerpts: entries
                .iter()
                .map(|e| e.body.chars().count().min(EXCERPT_CHARS))
                .collect(),
        };
        let bundle = self.render(email, context, threat, &full);
        let len = bundle.rendered.chars().count();
        if len <= budget {
            return Ok(bundle);
        }

        let zero = Lengths {
            body: 0,
            excerpts: vec![0; entries.len()],
        };
        let needed = self.render(email, context, threat, &zero).rendered.chars().count();
        if needed > budget {
            return Err(PromptError::BudgetTooSmall { needed, budget });
        }
        let plan = full.shrink(len - budget);
        let bundle = self.render(email, context, threat, &plan);
        debug_assert!(bundle.rendered.chars().count() <= budget);
        Ok(bundle)
    }

    fn render(
        &self,
        email: &CleanEmail,
        context: Context<'_>,
        threat: Option<&str>,
        lengths: &Lengths,
    ) -> PromptBundle {
        let email_block = format!(
            "{EMAIL_HEADING}\nSubject: {}\nSender: {}\nBody:\n{}\n{EMAIL_END}\n{}",
            email.subject,
            email.sender,
            prefix(&email.body, lengths.body),
            self.after_email
        );

        let mut context_text = format!("{CONTEXT_HEADING}\n");
        match context {
            Context::Disabled => context_text.push_str(&format!("{NONE_AVAILABLE}\n")),
            Context::Retrieved([]) => context_text.push_str(&format!("{NO_HISTORY}\n")),
            Context::Retrieved(entries) => {
                for (i, (e, &n)) in entries.iter().zip(&lengths.excerpts).enumerate() {
                    context_text.push_str(&format!(
                        "{ENTRY_MARKER}{} of {}]\nSubject: {}\nSender: {}\nExcerpt: {}\n",
                        i + 1,
                        entries.len(),
                        e.subject,
                        e.sender,
                        prefix(&e.body, n)
                    ));
                }
            }
        }
        context_text.push_str(CONTEXT_END);
        context_text.push('\n');
        let context_block = context_text + &self.after_context;

        let snippet = threat
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .unwrap_or(NONE_AVAILABLE);
        let threat_block = format!("{THREAT_HEADING}\n{snippet}\n");

        let rendered = [
            self.role.as_str(),
            &email_block,
            &context_block,
            &threat_block,
            &self.output_spec,
        ]
        .concat();
        PromptBundle {
            role_block: self.role.clone(),
            email_block,
            context_block,
            threat_block,
            output_spec_block: self.output_spec.clone(),
            rendered,
            system_message: SYSTEM_MESSAGE.to_string(),
        }
    }
}

/// Builds with the bundled template.
pub fn build_prompt(
    email: &CleanEmail,
    context: Context<'_>,
    threat: Option<&str>,
    budget: usize,
) -> Result<PromptBundle, PromptError> {
    PromptTemplate::v1().build(email, context, threat, budget)
}

fn prefix(s: &str, chars: usize) -> &str {
    match s.char_indices().nth(chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Char counts of the variable-length pieces. Rendered length is linear in
/// each of them, which makes the cut exact.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Lengths {
    body: usize,
    excerpts: Vec<usize>,
}

impl Lengths {
    fn shrink(&self, excess: usize) -> Lengths {
        let total: usize = self.excerpts.iter().sum();
        if total <= excess {
            return Lengths {
                body: self.body.saturating_sub(excess - total),
                excerpts: vec![0; self.excerpts.len()],
            };
        }
        let removed_at = |level: usize| -> usize { self.excerpts.iter().map(|&l| l.saturating_sub(level)).sum() };
        // Highest cap that still removes enough.
        let (mut lo, mut hi) = (0usize, self.excerpts.iter().copied().max().unwrap_or(0));
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if removed_at(mid) >= excess {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let level = lo;
        let mut surplus = removed_at(level) - excess;
        let excerpts = self
            .excerpts
            .iter()
            .map(|&l| {
                if l > level && surplus > 0 {
                    surplus -= 1;
                    level + 1
                } else {
                    l.min(level)
                }
            })
            .collect();
        Lengths {
            body: self.body,
            excerpts,
        }
    }
}

/// Sections of a rendered prompt, located by their fixed markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedSections<'a> {
    pub email: &'a str,
    pub context_entries: Vec<&'a str>,
}

/// Splits a rendered prompt into the query email text and the individual
/// context entries. Returns `None` if the markers are absent.
pub fn split_rendered(rendered: &str) -> Option<RenderedSections<'_>> {
    let email_start = rendered.find(EMAIL_HEADING)?;
    let email_len = rendered[email_start..].find(&format!("\n{EMAIL_END}\n"))?;
    let email = &rendered[email_start..email_start + email_len];
    let after = &rendered[email_start + email_len..];
    let ctx_start = after.find(CONTEXT_HEADING)?;
    let ctx = &after[ctx_start..];
    let ctx = &ctx[..ctx.find(CONTEXT_END)?];
    let starts: Vec<usize> = ctx.match_indices(ENTRY_MARKER).map(|(i, _)| i).collect();
    let context_entries = starts
        .iter()
        .zip(starts.iter().skip(1).chain([&ctx.len()]))
        .map(|(&a, &b)| &ctx[a..b])
        .collect();
    Some(RenderedSections { email, context_entries })
}
