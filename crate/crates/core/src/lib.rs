//! Personalized phishing detection.
//!
//! A query email is embedded and matched against the user's own legitimate
//! mail history, enriched with domain and URL reputation, and handed to a
//! chat model under a structured prompt whose JSON verdict is validated
//! before use. The [`eval`] module runs the with/without-retrieval matrix
//! and computes the usual confusion-matrix metrics.

pub mod email;
pub mod embedding;
pub mod eval;
pub mod index;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod sync;
pub mod threat;

#[cfg(test)]
mod testutil;
