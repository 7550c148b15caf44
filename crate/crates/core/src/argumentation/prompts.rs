//! Versioned prompt templates. Rendering is a pure function of the theme and
//! the inserted texts; instance ids and ad metadata never enter a prompt.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ArgumentError;

pub const SUMMARY_TEMPLATE: &str = "summary.v1";
pub const TALKING_POINT_TEMPLATE: &str = "talking_point.v1";
pub const ENTITIES_TEMPLATE: &str = "entities.v1";

/// Word limit stated inside the talking-point instruction.
pub const TALKING_POINT_PROMPT_WORDS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_id: String,
    pub rendered: String,
    pub theme: String,
    /// SHA-256 over the inserted texts.
    pub inputs_digest: String,
    /// The texts that were inserted, in order.
    #[serde(skip)]
    pub inputs: Vec<String>,
    /// Requested list length, for list-producing templates.
    #[serde(skip)]
    pub limit: Option<usize>,
}

impl Prompt {
    /// SHA-256 of the rendered prompt; the key of canned completions.
    pub fn digest(&self) -> String {
        sha256_hex(self.rendered.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn inputs_digest(texts: &[String]) -> String {
    let mut hasher = Sha256::new();
    for t in texts {
        hasher.update((t.len() as u64).to_le_bytes());
        hasher.update(t.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Collapses internal whitespace so every inserted text sits on one line.
pub fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn numbered(out: &mut String, texts: &[String]) {
    for (i, t) in texts.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, one_line(t));
    }
}

pub fn render_summary_prompt(theme: &str, texts: &[String], max_words: usize) -> Result<Prompt, ArgumentError> {
    if texts.is_empty() || texts.iter().all(|t| t.trim().is_empty()) {
        return Err(ArgumentError::EmptyTexts);
    }
    let mut rendered = format!(
        "The following social media messages share the theme \"{theme}\".\n\
         Write a short summary, at most {max_words} words, of the argument these messages advocate.\n\
         Respond with the summary only.\n\nMessages:\n"
    );
    numbered(&mut rendered, texts);
    Ok(Prompt {
        template_id: SUMMARY_TEMPLATE.into(),
        rendered,
        theme: theme.into(),
        inputs_digest: inputs_digest(texts),
        inputs: texts.to_vec(),
        limit: None,
    })
}

pub fn render_tp_prompt(theme: &str, summary: &str) -> Result<Prompt, ArgumentError> {
    let summary = summary.trim();
    if summary.is_empty() {
        return Err(ArgumentError::EmptySummary);
    }
    let rendered = format!(
        "Summary of social media messages under the theme \"{theme}\":\n{}\n\n\
         State the single talking point these messages advocate, in the context of the theme, \
         in at most {TALKING_POINT_PROMPT_WORDS} words. Respond with one sentence only.\n",
        one_line(summary)
    );
    let inputs = vec![summary.to_string()];
    Ok(Prompt {
        template_id: TALKING_POINT_TEMPLATE.into(),
        rendered,
        theme: theme.into(),
        inputs_digest: inputs_digest(&inputs),
        inputs,
        limit: None,
    })
}

pub fn render_entities_prompt(theme: &str, texts: &[String], k: usize) -> Result<Prompt, ArgumentError> {
    if texts.is_empty() || texts.iter().all(|t| t.trim().is_empty()) {
        return Err(ArgumentError::EmptyTexts);
    }
    let mut rendered = format!(
        "Identify the {k} most frequently mentioned entities (people, organizations, places or groups) \
         in the following messages.\nList one entity per line, most frequent first, with no other text.\n\n\
         Messages:\n"
    );
    numbered(&mut rendered, texts);
    Ok(Prompt {
        template_id: ENTITIES_TEMPLATE.into(),
        rendered,
        theme: theme.into(),
        inputs_digest: inputs_digest(texts),
        inputs: texts.to_vec(),
        limit: Some(k),
    })
}
