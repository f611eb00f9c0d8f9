//! A deterministic stand-in for the enrichment LLM, for offline runs.

use crate::provider::{ChatProvider, ProviderCall, ProviderError};
use async_trait::async_trait;
use grader_core::data::Rating;
use grader_core::text::pieces;
use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "by", "for", "with", "from", "as", "is", "are", "was", "were",
    "be", "been", "it", "its", "this", "that", "these", "those", "their", "they", "which", "what", "how", "why", "when", "also", "both",
    "each", "into", "than", "then", "there", "through", "while", "about", "because", "does", "do", "can", "will", "should", "must",
    "may", "not", "no", "all", "any", "some", "such", "more", "most", "other", "between", "describe", "explain", "discuss", "answer",
    "question", "role", "uses", "use", "used", "relies", "involves", "includes", "mentions", "covers", "misses", "relate", "related",
];

/// Lowercased alphanumeric words of length ≥ 3 that are not stopwords, in
/// order of first appearance.
pub fn content_words(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    pieces(text)
        .into_iter()
        .filter(|w| w.chars().count() >= 3 && w.chars().all(char::is_alphanumeric) && !STOPWORDS.contains(&w.as_str()))
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

/// Fraction of the reference's content words present in the answer.
pub fn overlap(answer: &str, reference: &str) -> f64 {
    let r = content_words(reference);
    if r.is_empty() {
        return 0.0;
    }
    let a: BTreeSet<String> = content_words(answer).into_iter().collect();
    r.iter().filter(|w| a.contains(*w)).count() as f64 / r.len() as f64
}

/// The rating level nearest to `4·overlap`, so ratings line up with the five
/// score levels.
pub fn rating_for(overlap: f64) -> Rating {
    let level = (overlap.clamp(0.0, 1.0) * 4.0).round() as usize;
    Rating::ALL[4 - level]
}

/// Extractive key points, template pseudo-questions and overlap-based
/// ratings. Replies are fenced JSON like a real model's.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedLlm;

fn fenced(v: serde_json::Value) -> String {
    format!("```json\n{v}\n```")
}

fn key_points(text: &str) -> Vec<String> {
    let words = content_words(text);
    if words.is_empty() {
        return vec![text.trim().chars().take(25).collect()];
    }
    words.chunks(2).take(3).map(|c| c.join(" ")).collect()
}

impl RuleBasedLlm {
    pub fn new() -> Self {
        Self
    }

    /// The JSON reply for one call.
    pub fn respond(&self, call: &ProviderCall) -> Result<String, ProviderError> {
        let var = |k: &str| call.variables.get(k).map(String::as_str).unwrap_or_default();
        let reply = match call.template_id.as_str() {
            "kpm_student" => serde_json::json!({ "key_points": key_points(var("answer")) }),
            "kpm_reference" => serde_json::json!({ "key_points": key_points(var("reference")) }),
            "pqm" => {
                let words = content_words(var("answer"));
                let topic = content_words(var("example_question")).into_iter().next().unwrap_or_else(|| "this topic".into());
                let focus = if words.is_empty() { "the main idea".to_string() } else { words[..words.len().min(3)].join(", ") };
                serde_json::json!({ "pseudo_question": format!("In the context of {topic}, what is said about {focus}?") })
            }
            "lge" => {
                let (answer, reference) = (var("answer"), var("reference"));
                let have: BTreeSet<String> = content_words(answer).into_iter().collect();
                let (covered, missing): (Vec<String>, Vec<String>) = content_words(reference).into_iter().partition(|w| have.contains(w));
                // One short sentence each, at most two concepts named.
                let phrase = |verb: &str, ws: &[String]| -> Vec<String> {
                    if ws.is_empty() {
                        Vec::new()
                    } else {
                        vec![format!("{verb} {}", ws[..ws.len().min(2)].join(" and "))]
                    }
                };
                let strengths = phrase("covers", &covered);
                let weaknesses = phrase("misses", &missing);
                serde_json::json!({
                    "rating": rating_for(overlap(answer, reference)).as_str(),
                    "strengths": strengths,
                    "weaknesses": weaknesses,
                })
            }
            other => return Err(ProviderError::Fatal(format!("mock has no rule for template {other:?}"))),
        };
        Ok(fenced(reply))
    }
}

#[async_trait]
impl ChatProvider for RuleBasedLlm {
    async fn complete(&self, call: &ProviderCall) -> Result<String, ProviderError> {
        self.respond(call)
    }
}
