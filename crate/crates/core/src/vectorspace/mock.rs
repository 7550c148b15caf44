use super::{EmbedError, EmbeddingProvider};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`, starting from `state`.
pub fn fnv1a64(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Deterministic bag-of-hashed-tokens embedder.
///
/// Each token is hashed with FNV-1a (offset basis, then the seed as 8
/// little-endian bytes, then the token's UTF-8 bytes); the hash modulo the
/// dimension picks a bucket whose count is incremented. Texts without any
/// alphanumeric token hash their trimmed lowercase form as a single token.
/// Normalization happens in [`super::embed`].
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashingEmbedder { dimension, seed }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let h = fnv1a64(fnv1a64(FNV_OFFSET, &self.seed.to_le_bytes()), token.as_bytes());
        (h % self.dimension as u64) as usize
    }

    pub fn counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            let whole = text.trim().to_lowercase();
            if !whole.is_empty() {
                tokens.push(whole);
            }
        }
        for token in &tokens {
            v[self.bucket(token)] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn name(&self) -> &str {
        "mock-hashing"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.counts(t)).collect())
    }

    fn max_batch(&self) -> usize {
        usize::MAX
    }
}
