//! Deterministic offline LLM: exact-prompt canned completions first, then a
//! rule-based fallback per template.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::llm::{GenerationParams, LlmClient, LlmError};
use super::prompts::{Prompt, ENTITIES_TEMPLATE, SUMMARY_TEMPLATE, TALKING_POINT_TEMPLATE};
use super::{first_sentence, one_line};

pub const TALKING_POINT_PREFIX: &str = "Advocates the position summarized as: ";
pub const TALKING_POINT_FALLBACK_WORDS: usize = 20;

#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    canned: BTreeMap<String, String>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_canned(canned: BTreeMap<String, String>) -> Self {
        MockLlm { canned }
    }

    /// Loads a JSON object mapping prompt digests to completions.
    pub fn from_fixture(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let canned = serde_json::from_str(&raw).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(MockLlm { canned })
    }

    pub fn insert(&mut self, digest: impl Into<String>, completion: impl Into<String>) {
        self.canned.insert(digest.into(), completion.into());
    }

    pub fn fallback(prompt: &Prompt) -> String {
        match prompt.template_id.as_str() {
            SUMMARY_TEMPLATE => summary_fallback(&prompt.inputs),
            TALKING_POINT_TEMPLATE => {
                let summary = prompt.inputs.first().map(String::as_str).unwrap_or("");
                talking_point_fallback(summary)
            }
            ENTITIES_TEMPLATE => entity_fallback(&prompt.inputs, prompt.limit.unwrap_or(5)).join("\n"),
            _ => one_line(&prompt.rendered),
        }
    }
}

impl LlmClient for MockLlm {
    fn name(&self) -> &str {
        "mock"
    }

    fn model(&self) -> &str {
        "mock-deterministic"
    }

    fn complete(&self, prompt: &Prompt, _params: &GenerationParams) -> Result<String, LlmError> {
        Ok(self
            .canned
            .get(&prompt.digest())
            .cloned()
            .unwrap_or_else(|| Self::fallback(prompt)))
    }
}

/// First sentence of each text (terminal punctuation dropped) joined by
/// `"; "`, closed with a period.
pub fn summary_fallback(texts: &[String]) -> String {
    let parts: Vec<String> = texts
        .iter()
        .map(|t| first_sentence(t))
        .map(|s| s.trim_end_matches(['.', '!', '?']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    format!("{}.", parts.join("; "))
}

pub fn talking_point_fallback(summary: &str) -> String {
    let words: Vec<&str> = summary.split_whitespace().take(TALKING_POINT_FALLBACK_WORDS).collect();
    format!("{TALKING_POINT_PREFIX}{}", words.join(" "))
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "are", "as", "at", "be", "because", "been", "but", "by", "can",
    "could", "do", "does", "for", "from", "get", "has", "have", "he", "her", "here", "his", "how", "if", "in", "into",
    "is", "it", "its", "just", "more", "most", "my", "no", "not", "now", "of", "on", "one", "or", "our", "out", "over",
    "she", "so", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "up",
    "us", "was", "we", "were", "what", "when", "which", "who", "why", "will", "with", "would", "you", "your",
];

struct Token<'a> {
    word: &'a str,
    ends_sentence: bool,
}

fn tokens(text: &str) -> Vec<Token<'_>> {
    text.split_whitespace()
        .filter_map(|raw| {
            let ends_sentence = raw.ends_with(['.', '!', '?', ';', ':', ',']);
            let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
            (!word.is_empty()).then_some(Token { word, ends_sentence })
        })
        .collect()
}

fn capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Frequency-ranked entity candidates: adjacent capitalized word pairs count
/// as one bigram entity, every other non-stopword word of three or more
/// characters as a unigram. Case-insensitive counting keeps the first-seen
/// casing; ties go to the earlier first occurrence.
pub fn entity_fallback(texts: &[String], k: usize) -> Vec<String> {
    let mut counts: HashMap<String, (usize, usize, String)> = HashMap::new();
    let mut order = 0usize;
    let mut bump = |surface: String| {
        let key = surface.to_lowercase();
        let entry = counts.entry(key).or_insert_with(|| {
            order += 1;
            (0, order, surface)
        });
        entry.0 += 1;
    };
    for text in texts {
        let toks = tokens(text);
        let mut i = 0;
        while i < toks.len() {
            let t = &toks[i];
            if i + 1 < toks.len() && !t.ends_sentence && capitalized(t.word) && capitalized(toks[i + 1].word) {
                bump(format!("{} {}", t.word, toks[i + 1].word));
                i += 2;
                continue;
            }
            let lower = t.word.to_lowercase();
            if t.word.chars().count() >= 3 && !STOPWORDS.contains(&lower.as_str()) {
                bump(t.word.to_string());
            }
            i += 1;
        }
    }
    let mut ranked: Vec<(usize, usize, String)> = counts.into_values().collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|(_, _, s)| s).collect()
}
