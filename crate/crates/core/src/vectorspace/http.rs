use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider};
use crate::retry::RetryPolicy;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dimension: usize,
}

/// Client for a remote embedding service speaking
/// `POST {base}/embed {"texts": [...]} -> {"vectors": [[...]], "dimension": d}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    batch_size: usize,
    parallelism: usize,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, dimension: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpEmbedder {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            dimension,
            batch_size: 64,
            parallelism: 1,
            retry: RetryPolicy::default(),
            agent,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, texts: &[String]) -> Result<EmbedResponse, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&EmbedRequest { texts })
            .map_err(Attempt::from)?;
        resp.body_mut()
            .read_json::<EmbedResponse>()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))
    }
}

enum Attempt {
    Retriable(String),
    Fatal(String),
}

impl From<ureq::Error> for Attempt {
    fn from(e: ureq::Error) -> Self {
        match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
                Attempt::Fatal(format!("HTTP {code}"))
            }
            other => Attempt::Retriable(other.to_string()),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        "http"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let (resp, retries) = self
            .retry
            .run(|| self.post(texts), |a| matches!(a, Attempt::Retriable(_)))
            .map_err(|(a, retries)| {
                let msg = match a {
                    Attempt::Retriable(m) | Attempt::Fatal(m) => m,
                };
                EmbedError::ProviderUnavailable(format!("{msg} (after {retries} retries)"))
            })?;
        if retries > 0 {
            tracing::info!(retries, "embedding batch succeeded after retries");
        }
        if resp.dimension != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: resp.dimension,
            });
        }
        Ok(resp.vectors)
    }

    fn max_batch(&self) -> usize {
        self.batch_size
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}
