//! Offline embedding provider built on the hashing trick.
//!
//! Text is split into lowercase alphanumeric tokens; every token and every
//! character trigram of a token adds one to a hashed bucket. Texts that
//! share tokens or word fragments end up with a high cosine.

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::retry::ProviderError;

pub const MIN_MOCK_DIM: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

const TOKEN_NS: u8 = b'w';
const TRIGRAM_NS: u8 = b't';

fn fnv1a(namespace: u8, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in std::iter::once(&namespace).chain(bytes) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased tokens, split on every non-alphanumeric character
/// (which covers `.` and `_` in relation labels).
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

pub fn mock_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbedError> {
    if dim < MIN_MOCK_DIM {
        return Err(EmbedError::Domain(format!("mock dimension {dim} is below {MIN_MOCK_DIM}")));
    }
    let mut values = vec![0.0f64; dim];
    let mut any = false;
    for token in tokenize(text) {
        any = true;
        values[(fnv1a(TOKEN_NS, token.as_bytes()) % dim as u64) as usize] += 1.0;
        let chars: Vec<char> = token.chars().collect();
        for window in chars.windows(3) {
            let tri: String = window.iter().collect();
            values[(fnv1a(TRIGRAM_NS, tri.as_bytes()) % dim as u64) as usize] += 1.0;
        }
    }
    if !any {
        return Err(EmbeddingVector::empty_text_error(text));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v /= norm;
    }
    EmbeddingVector::new(values)
}

#[derive(Debug, Clone)]
pub struct MockEmbeddingProvider {
    dim: usize,
}

impl MockEmbeddingProvider {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < MIN_MOCK_DIM {
            return Err(EmbedError::Domain(format!("mock dimension {dim} is below {MIN_MOCK_DIM}")));
        }
        Ok(Self { dim })
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn identity(&self) -> String {
        format!("mock/hash-trigram-{}", self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| mock_embed(t, self.dim).map(EmbeddingVector::into_values))
            .collect::<Result<_, _>>()
            .map_err(|e| ProviderError::Rejected(e.to_string()))
    }
}
