use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::llm::{GenerationParams, LlmClient, LlmError};
use super::prompts::Prompt;

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompleteResponse {
    completion: String,
}

/// Client for `POST {base}/complete {"prompt", "max_tokens", "temperature"}
/// -> {"completion"}`.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    endpoint: String,
    model: String,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(base_url: &str, model: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpLlm {
            endpoint: format!("{}/complete", base_url.trim_end_matches('/')),
            model: model.into(),
            agent,
        }
    }
}

impl LlmClient for HttpLlm {
    fn name(&self) -> &str {
        "http"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &Prompt, params: &GenerationParams) -> Result<String, LlmError> {
        let body = CompleteRequest {
            prompt: &prompt.rendered,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
        };
        let mut resp = self.agent.post(&self.endpoint).send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
                LlmError::Rejected(format!("HTTP {code}"))
            }
            other => LlmError::Transport(other.to_string()),
        })?;
        let parsed: CompleteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Rejected(format!("bad response body: {e}")))?;
        Ok(parsed.completion)
    }
}
