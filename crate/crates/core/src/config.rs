//! Run configuration: a TOML file with per-field defaults, validated before
//! any work starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argumentation::{HttpLlm, LlmClient, LlmRunner, MockLlm, DEFAULT_SUMMARY_MAX_WORDS};
use crate::clustering::KMeansParams;
use crate::consolidation::{MergeScope, DEFAULT_MERGE_THRESHOLD};
use crate::retry::RetryPolicy;
use crate::vectorspace::{EmbeddingProvider, HashingEmbedder, HttpEmbedder};

pub const DEFAULT_ASSIGN_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value for {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub url: Option<String>,
    pub dimension: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub parallelism: usize,
    pub max_retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            url: None,
            dimension: 256,
            seed: 7,
            batch_size: 64,
            parallelism: 1,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: ProviderKind,
    pub url: Option<String>,
    pub model: String,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_tokens: u32,
    /// JSON object mapping prompt digests to canned completions (mock only).
    pub fixture: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            kind: ProviderKind::Mock,
            url: None,
            model: "mock-deterministic".into(),
            parallelism: 4,
            timeout_secs: 60,
            max_retries: 3,
            max_tokens: 256,
            fixture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k_min: 2,
            k_max: 10,
            seed: 42,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

impl KMeansConfig {
    pub fn params(&self) -> KMeansParams {
        KMeansParams {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub top_m: usize,
    pub merge_threshold: f64,
    pub assign_threshold: f64,
    pub max_iterations: u32,
    pub ablation_no_summary: bool,
    pub merge_scope: MergeScope,
    pub summary_max_words: usize,
    pub provider: ProviderConfig,
    pub llm: LlmConfig,
    pub kmeans: KMeansConfig,
    pub paths: PathsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            top_m: 5,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            assign_threshold: DEFAULT_ASSIGN_THRESHOLD,
            max_iterations: 2,
            ablation_no_summary: false,
            merge_scope: MergeScope::Theme,
            summary_max_words: DEFAULT_SUMMARY_MAX_WORDS,
            provider: ProviderConfig::default(),
            llm: LlmConfig::default(),
            kmeans: KMeansConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn unit_interval(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key,
            message: format!("{v} is outside (0, 1]"),
        })
    }
}

fn positive(key: &'static str, v: usize) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key,
            message: "must be at least 1".into(),
        })
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        unit_interval("merge_threshold", self.merge_threshold)?;
        unit_interval("assign_threshold", self.assign_threshold)?;
        positive("top_m", self.top_m)?;
        positive("summary_max_words", self.summary_max_words)?;
        positive("provider.dimension", self.provider.dimension)?;
        positive("provider.batch_size", self.provider.batch_size)?;
        positive("provider.parallelism", self.provider.parallelism)?;
        positive("llm.parallelism", self.llm.parallelism)?;
        if self.kmeans.k_min < 2 {
            return Err(ConfigError::Invalid {
                key: "kmeans.k_min",
                message: format!("{} is below 2", self.kmeans.k_min),
            });
        }
        if self.kmeans.k_max < self.kmeans.k_min {
            return Err(ConfigError::Invalid {
                key: "kmeans.k_max",
                message: format!("{} is below k_min {}", self.kmeans.k_max, self.kmeans.k_min),
            });
        }
        positive("kmeans.max_iter", self.kmeans.max_iter)?;
        if !(self.kmeans.tol.is_finite() && self.kmeans.tol >= 0.0) {
            return Err(ConfigError::Invalid {
                key: "kmeans.tol",
                message: format!("{} is not a nonnegative number", self.kmeans.tol),
            });
        }
        if self.llm.timeout_secs == 0 {
            return Err(ConfigError::Invalid {
                key: "llm.timeout_secs",
                message: "must be at least 1".into(),
            });
        }
        if self.provider.kind == ProviderKind::Http && self.provider.url.is_none() {
            return Err(ConfigError::Invalid {
                key: "provider.url",
                message: "required when provider.kind = \"http\"".into(),
            });
        }
        if self.llm.kind == ProviderKind::Http && self.llm.url.is_none() {
            return Err(ConfigError::Invalid {
                key: "llm.url",
                message: "required when llm.kind = \"http\"".into(),
            });
        }
        Ok(())
    }

    pub fn build_embedder(&self) -> Arc<dyn EmbeddingProvider> {
        let p = &self.provider;
        match p.kind {
            ProviderKind::Mock => Arc::new(HashingEmbedder::new(p.dimension, p.seed)),
            ProviderKind::Http => Arc::new(
                HttpEmbedder::new(p.url.as_deref().unwrap_or_default(), p.dimension)
                    .with_batch_size(p.batch_size)
                    .with_parallelism(p.parallelism)
                    .with_retry(RetryPolicy {
                        max_retries: p.max_retries,
                        ..RetryPolicy::default()
                    }),
            ),
        }
    }

    pub fn build_llm(&self) -> Result<LlmRunner, ConfigError> {
        let l = &self.llm;
        let timeout = Duration::from_secs(l.timeout_secs);
        let client: Arc<dyn LlmClient> = match l.kind {
            ProviderKind::Mock => match &l.fixture {
                Some(path) => Arc::new(MockLlm::from_fixture(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?),
                None => Arc::new(MockLlm::new()),
            },
            ProviderKind::Http => Arc::new(HttpLlm::new(
                l.url.as_deref().unwrap_or_default(),
                l.model.clone(),
                timeout,
            )),
        };
        let mut runner = LlmRunner::new(client)
            .with_timeout(timeout)
            .with_parallelism(l.parallelism)
            .with_retry(RetryPolicy {
                max_retries: l.max_retries,
                ..RetryPolicy::default()
            });
        runner.params.max_tokens = l.max_tokens;
        Ok(runner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.top_m, 5);
        assert_eq!(c.merge_threshold, 0.70);
        assert_eq!(c.assign_threshold, 0.5);
        assert_eq!(c.max_iterations, 2);
        assert_eq!(c.kmeans.k_min, 2);
        assert!(!c.ablation_no_summary);
    }

    #[test]
    fn sections_and_overrides() {
        let c = Config::from_toml_str(
            "merge_threshold = 0.8\nmerge_scope = \"global\"\n[kmeans]\nk_max = 6\nseed = 3\n[provider]\ndimension = 32\n",
        )
        .unwrap();
        assert_eq!(c.merge_threshold, 0.8);
        assert_eq!(c.merge_scope, MergeScope::Global);
        assert_eq!(c.kmeans.k_max, 6);
        assert_eq!(c.kmeans.k_min, 2);
        assert_eq!(c.provider.dimension, 32);
    }

    #[test]
    fn rejects_bad_values() {
        for (text, key) in [
            ("merge_threshold = 1.5", "merge_threshold"),
            ("assign_threshold = 0.0", "assign_threshold"),
            ("[kmeans]\nk_min = 1", "kmeans.k_min"),
            ("[kmeans]\nk_min = 5\nk_max = 4", "kmeans.k_max"),
            ("[llm]\nkind = \"http\"", "llm.url"),
        ] {
            match Config::from_toml_str(text) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(Config::from_toml_str("bogus = 1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::default();
        c.paths.corpus = Some("data/ads.jsonl".into());
        c.llm.fixture = Some("canned.json".into());
        let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }
}
