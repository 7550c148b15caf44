use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::Prompt;
use crate::retry::RetryPolicy;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    /// Network or server-side failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("call timed out after {0:?}")]
    Timeout(Duration),
    /// The service refused the request; retrying will not help.
    #[error("request rejected: {0}")]
    Rejected(String),
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::Timeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_tokens: 256,
            temperature: 0.0,
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn name(&self) -> &str;

    fn model(&self) -> &str;

    fn complete(&self, prompt: &Prompt, params: &GenerationParams) -> Result<String, LlmError>;
}

/// Audit entry for one logical LLM call (including its retries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub template_id: String,
    pub prompt_digest: String,
    pub duration_ms: u64,
    pub retries: u32,
}

/// Wraps a client with timeout, retry and generation settings.
#[derive(Clone)]
pub struct LlmRunner {
    client: Arc<dyn LlmClient>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub params: GenerationParams,
    pub parallelism: usize,
}

impl LlmRunner {
    pub fn new(client: Arc<dyn LlmClient>) -> Self {
        LlmRunner {
            client,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
            params: GenerationParams::default(),
            parallelism: 4,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn client(&self) -> &Arc<dyn LlmClient> {
        &self.client
    }

    /// Same settings around a different client.
    pub fn with_client(&self, client: Arc<dyn LlmClient>) -> Self {
        LlmRunner { client, ..self.clone() }
    }

    fn attempt(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let (tx, rx) = mpsc::channel();
        let client = Arc::clone(&self.client);
        let prompt = prompt.clone();
        let params = self.params;
        // a timed-out call is abandoned, its thread finishes on its own
        std::thread::spawn(move || {
            let _ = tx.send(client.complete(&prompt, &params));
        });
        match rx.recv_timeout(self.timeout) {
            Ok(result) => result,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(LlmError::Timeout(self.timeout)),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(LlmError::Transport("client thread panicked".into())),
        }
    }

    /// Runs one completion with retries on transport failures.
    pub fn call(&self, prompt: &Prompt) -> Result<(String, CallRecord), (LlmError, CallRecord)> {
        let started = Instant::now();
        let outcome = self.retry.run(|| self.attempt(prompt), LlmError::is_retriable);
        let record = |retries| CallRecord {
            template_id: prompt.template_id.clone(),
            prompt_digest: prompt.digest(),
            duration_ms: started.elapsed().as_millis() as u64,
            retries,
        };
        match outcome {
            Ok((text, retries)) => {
                if retries > 0 {
                    tracing::info!(retries, template = %prompt.template_id, "completion succeeded after retries");
                }
                Ok((text, record(retries)))
            }
            Err((e, retries)) => Err((e, record(retries))),
        }
    }
}
