//! Prompt construction and LLM calls: sub-cluster summaries, talking points
//! and entity lists.

mod http;
mod llm;
pub mod mock;
mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpLlm;
pub use llm::{CallRecord, GenerationParams, LlmClient, LlmError, LlmRunner};
pub use mock::MockLlm;
pub use prompts::{
    one_line, render_entities_prompt, render_summary_prompt, render_tp_prompt, sha256_hex, Prompt, ENTITIES_TEMPLATE,
    SUMMARY_TEMPLATE, TALKING_POINT_TEMPLATE,
};

pub const DEFAULT_SUMMARY_MAX_WORDS: usize = 120;
pub const TALKING_POINT_SOFT_WORDS: usize = 40;
pub const TALKING_POINT_HARD_WORDS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArgumentError {
    #[error("no texts to put in the prompt")]
    EmptyTexts,
    #[error("summary is empty")]
    EmptySummary,
    #[error("LLM transport failure after {retries} retries: {source}")]
    LlmTransport {
        #[source]
        source: LlmError,
        retries: u32,
    },
    #[error("LLM returned an empty completion")]
    EmptyCompletion,
    #[error("completion has {words} words, limit {limit}")]
    OverLong { words: usize, limit: usize },
    #[error("completion has {words} words and no sentence boundary within {limit}")]
    OverLongAfterTruncation { words: usize, limit: usize },
}

/// A generated sub-cluster summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub theme: String,
    pub source_instance_ids: Vec<String>,
    pub prompt_digest: String,
}

/// First sentence of `text`: up to the first `.`, `!` or `?` that is
/// followed by whitespace or the end, with internal whitespace collapsed.
pub fn first_sentence(text: &str) -> String {
    let text = one_line(text);
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                None => return text,
                Some((_, next)) if next.is_whitespace() => return text[..i + c.len_utf8()].to_string(),
                _ => {}
            }
        }
    }
    text
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps `text` whole when within `cap` words, else cuts at the last sentence
/// end that leaves at most `cap` words.
pub fn truncate_at_sentence(text: &str, cap: usize) -> Result<String, ArgumentError> {
    let words = word_count(text);
    if words <= cap {
        return Ok(text.to_string());
    }
    let mut cut = None;
    let mut count = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                in_word = false;
                if count > cap {
                    break;
                }
                let prev = text[..i].chars().next_back();
                if matches!(prev, Some('.' | '!' | '?')) {
                    cut = Some(i);
                }
            }
        } else if !in_word {
            in_word = true;
            count += 1;
        }
    }
    match cut {
        Some(end) => Ok(text[..end].trim_end().to_string()),
        None => Err(ArgumentError::OverLongAfterTruncation { words, limit: cap }),
    }
}

fn completion(runner: &LlmRunner, prompt: &Prompt) -> Result<(String, CallRecord), ArgumentError> {
    let (text, record) = runner
        .call(prompt)
        .map_err(|(source, record)| ArgumentError::LlmTransport {
            source,
            retries: record.retries,
        })?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(ArgumentError::EmptyCompletion);
    }
    Ok((text, record))
}

/// Runs a summary prompt and caps the result at `max_words`.
pub fn summarize_subcluster(
    prompt: &Prompt,
    runner: &LlmRunner,
    max_words: usize,
) -> Result<(String, CallRecord), ArgumentError> {
    let (text, record) = completion(runner, prompt)?;
    let text = truncate_at_sentence(&text, max_words)?;
    Ok((text, record))
}

/// Runs a talking-point prompt. Only the first non-empty line is kept;
/// wrapping quotes are stripped.
pub fn generate_talking_point(prompt: &Prompt, runner: &LlmRunner) -> Result<(String, CallRecord), ArgumentError> {
    let (text, record) = completion(runner, prompt)?;
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    let line = line
        .trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}')
        .trim();
    if line.is_empty() {
        return Err(ArgumentError::EmptyCompletion);
    }
    let words = word_count(line);
    if words > TALKING_POINT_HARD_WORDS {
        return Err(ArgumentError::OverLong {
            words,
            limit: TALKING_POINT_HARD_WORDS,
        });
    }
    if words > TALKING_POINT_SOFT_WORDS {
        tracing::warn!(words, "talking point exceeds the soft word cap");
    }
    Ok((line.to_string(), record))
}

/// Asks for the `k` most mentioned entities and parses one per line,
/// deduplicating case-insensitively.
pub fn extract_entities(
    theme: &str,
    texts: &[String],
    k: usize,
    runner: &LlmRunner,
) -> Result<(Vec<String>, CallRecord), ArgumentError> {
    let prompt = render_entities_prompt(theme, texts, k.max(1))?;
    let (text, record) = completion(runner, &prompt)?;
    Ok((parse_entity_list(&text, k), record))
}

pub fn parse_entity_list(text: &str, k: usize) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let item = line.trim().trim_start_matches(['-', '*', '\u{2022}']).trim_start();
        // numbered lists: "1." or "1)"
        let item = match item.find(['.', ')']) {
            Some(pos) if pos > 0 && item[..pos].chars().all(|c| c.is_ascii_digit()) => item[pos + 1..].trim(),
            _ => item,
        };
        let item = item.trim_matches(|c| c == '"' || c == '\'').trim();
        if item.is_empty() {
            continue;
        }
        if seen.insert(item.to_lowercase()) {
            out.push(item.to_string());
        }
        if out.len() == k {
            break;
        }
    }
    out
}
