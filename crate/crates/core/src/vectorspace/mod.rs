//! Embedding provider contract and cosine geometry.
//!
//! Every "distance" elsewhere in the crate is cosine distance, `1 - sim`.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpEmbedder;
pub use mock::{fnv1a64, tokenize, HashingEmbedder};

/// Allowed deviation of an embedding's L2 norm from one.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("text at position {0} is empty")]
    EmptyText(usize),
    #[error("vector at position {0} is zero or not finite")]
    Degenerate(usize),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum VectorError {
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// L2-normalizes `values`. Fails on zero or non-finite input.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, VectorError> {
        let norm = l2_norm(&values);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(VectorError::ZeroVector);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Cosine similarity clamped to [-1, 1]. Both sides are unit length and
    /// non-empty, so only a dimension mismatch can fail.
    pub fn similarity(&self, other: &Embedding) -> Result<f64, VectorError> {
        cosine_similarity(&self.0, &other.0)
    }

    pub fn distance(&self, other: &Embedding) -> Result<f64, VectorError> {
        cosine_distance(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Raw vectors for one batch, in input order. Need not be normalized.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;

    /// Largest batch handed to `embed_batch`.
    fn max_batch(&self) -> usize {
        64
    }

    /// How many batches may be in flight at once.
    fn parallelism(&self) -> usize {
        1
    }
}

type BatchResult = Result<Vec<Vec<f64>>, EmbedError>;

/// Embeds `texts` with `provider`, returning one unit vector per text in
/// input order. Any failing batch fails the whole call.
pub fn embed<P: EmbeddingProvider + ?Sized>(texts: &[String], provider: &P) -> Result<Vec<Embedding>, EmbedError> {
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText(pos));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let batch = provider.max_batch().max(1);
    let chunks: Vec<&[String]> = texts.chunks(batch).collect();
    let workers = provider.parallelism().clamp(1, chunks.len());

    let raw: Vec<Vec<Vec<f64>>> = if workers == 1 {
        chunks
            .iter()
            .map(|chunk| run_chunk(provider, chunk))
            .collect::<Result<_, _>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<BatchResult>>> = Mutex::new(vec![None; chunks.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= chunks.len() {
                        break;
                    }
                    let result = run_chunk(provider, chunks[idx]);
                    slots.lock().expect("embedding slots poisoned")[idx] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("embedding slots poisoned")
            .into_iter()
            .map(|slot| slot.expect("every chunk processed"))
            .collect::<Result<_, _>>()?
    };

    let dim = provider.dimension();
    raw.into_iter()
        .flatten()
        .enumerate()
        .map(|(pos, values)| {
            if values.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    got: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::Degenerate(pos));
            }
            Embedding::normalized(values).map_err(|_| EmbedError::Degenerate(pos))
        })
        .collect()
}

fn run_chunk<P: EmbeddingProvider + ?Sized>(provider: &P, chunk: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let out = provider.embed_batch(chunk)?;
    if out.len() != chunk.len() {
        return Err(EmbedError::CountMismatch {
            expected: chunk.len(),
            got: out.len(),
        });
    }
    Ok(out)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity, clamped to [-1, 1]. Symmetric bit-for-bit.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::DimensionMismatch(u.len(), v.len()));
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(VectorError::ZeroVector);
    }
    // min/max keeps the product independent of argument order
    let denom = nu.min(nv) * nu.max(nv);
    Ok((dot(u, v) / denom).clamp(-1.0, 1.0))
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    cosine_similarity(u, v).map(|s| 1.0 - s)
}

/// Squared euclidean distance.
pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}
