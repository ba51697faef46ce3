//! Text embeddings, cosine similarity, and similarity-ranked relation lookup.
//!
//! [`EmbeddingGateway`] fronts a pluggable [`EmbeddingProvider`] with an
//! in-memory cache and an optional append-only cache file. Every lookup is
//! cache-first; misses are sent to the provider in one batch.

mod cache;
pub(crate) mod http;
mod mock;
mod scripted;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use cache::{CacheFile, CacheStats, CACHE_HEADER};
pub use http::HttpEmbeddingProvider;
pub use mock::{mock_embed, tokenize, MockEmbeddingProvider, MIN_MOCK_DIM};
pub use scripted::ScriptedEmbeddingProvider;

use crate::digest::sha256_hex;
use crate::retry::{ProviderError, RetryPolicy};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding contract violated: {0}")]
    Contract(String),
    #[error("embedding domain error: {0}")]
    Domain(String),
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("embedding cache: {0}")]
    Cache(String),
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Contract("zero-length embedding".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(EmbedError::Contract(format!("non-finite component {bad}")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn empty_text_error(text: &str) -> EmbedError {
        EmbedError::Domain(format!("text {text:?} has no embeddable tokens"))
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::Contract(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::Domain("cosine of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Backend that turns texts into vectors. Implementations must be
/// deterministic per (identity, text) and preserve input order.
pub trait EmbeddingProvider: Send + Sync {
    /// Provider and model name; part of every cache key.
    fn identity(&self) -> String;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct GatewayStats {
    pub provider_calls: u64,
    pub provider_texts: u64,
    pub cache_hits: u64,
}

pub struct EmbeddingGateway {
    provider: Box<dyn EmbeddingProvider>,
    identity: String,
    identity_digest: String,
    retry: RetryPolicy,
    memory: Mutex<HashMap<String, Arc<EmbeddingVector>>>,
    persisted: Mutex<HashMap<String, Arc<EmbeddingVector>>>,
    file: Option<Mutex<CacheFile>>,
    dim: Mutex<Option<usize>>,
    provider_calls: AtomicU64,
    provider_texts: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for EmbeddingGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingGateway").field("identity", &self.identity).finish_non_exhaustive()
    }
}

impl EmbeddingGateway {
    pub fn new(provider: Box<dyn EmbeddingProvider>) -> Self {
        let identity = provider.identity();
        Self {
            identity_digest: sha256_hex(&identity),
            identity,
            provider,
            retry: RetryPolicy::default(),
            memory: Mutex::default(),
            persisted: Mutex::default(),
            file: None,
            dim: Mutex::new(None),
            provider_calls: AtomicU64::new(0),
            provider_texts: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn mock(dim: usize) -> Result<Self, EmbedError> {
        Ok(Self::new(Box::new(MockEmbeddingProvider::new(dim)?)))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Attaches a cache file, loading records written under this provider
    /// identity. The file is created when missing.
    pub fn with_cache_file(mut self, path: &Path) -> Result<Self, EmbedError> {
        let (file, records) = CacheFile::open(path, &self.identity_digest)?;
        let mut persisted = HashMap::with_capacity(records.len());
        for (text_digest, values) in records {
            persisted.insert(text_digest, Arc::new(EmbeddingVector::new(values)?));
        }
        self.persisted = Mutex::new(persisted);
        self.file = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
            provider_texts: self.provider_texts.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<Arc<EmbeddingVector>, EmbedError> {
        if let Some(v) = self.memory.lock().unwrap().get(text) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(v));
        }
        Ok(self.embed(&[text.to_owned()])?.pop().expect("one text in, one vector out"))
    }

    /// Embeds `texts` in order. Cached texts never reach the provider and
    /// duplicate misses are sent once.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Arc<EmbeddingVector>>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::Contract("empty text batch".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(EmbedError::Contract(format!("text {i} in batch is empty")));
        }
        let mut out: Vec<Option<Arc<EmbeddingVector>>> = vec![None; texts.len()];
        let mut misses: Vec<&String> = Vec::new();
        {
            let memory = self.memory.lock().unwrap();
            let persisted = self.persisted.lock().unwrap();
            for (slot, text) in out.iter_mut().zip(texts) {
                if let Some(v) = memory.get(text.as_str()) {
                    *slot = Some(Arc::clone(v));
                } else if let Some(v) = (!persisted.is_empty()).then(|| persisted.get(&sha256_hex(text))).flatten() {
                    *slot = Some(Arc::clone(v));
                } else if !misses.contains(&text) {
                    misses.push(text);
                }
            }
        }
        let hits = out.iter().filter(|s| s.is_some()).count() as u64;
        self.cache_hits.fetch_add(hits, Ordering::Relaxed);

        if !misses.is_empty() {
            let batch: Vec<String> = misses.iter().map(|s| (*s).clone()).collect();
            let fetched = self.fetch(&batch)?;
            let mut memory = self.memory.lock().unwrap();
            for (text, vector) in batch.iter().zip(fetched) {
                memory.entry(text.clone()).or_insert(vector);
            }
            for (slot, text) in out.iter_mut().zip(texts) {
                if slot.is_none() {
                    *slot = memory.get(text.as_str()).cloned();
                }
            }
        } else {
            // persisted hits are promoted so later lookups skip the digest
            let mut memory = self.memory.lock().unwrap();
            for (slot, text) in out.iter().zip(texts) {
                if let Some(v) = slot {
                    memory.entry(text.clone()).or_insert_with(|| Arc::clone(v));
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }

    fn fetch(&self, batch: &[String]) -> Result<Vec<Arc<EmbeddingVector>>, EmbedError> {
        let raw = self.retry.run(|| {
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            self.provider.embed_batch(batch)
        })?;
        self.provider_texts.fetch_add(batch.len() as u64, Ordering::Relaxed);
        if raw.len() != batch.len() {
            return Err(EmbedError::Contract(format!(
                "provider returned {} vectors for {} texts",
                raw.len(),
                batch.len()
            )));
        }
        let mut vectors = Vec::with_capacity(raw.len());
        for values in raw {
            let v = EmbeddingVector::new(values)?;
            self.check_dim(v.dim())?;
            vectors.push(Arc::new(v));
        }
        if let Some(file) = &self.file {
            let mut file = file.lock().unwrap();
            for (text, v) in batch.iter().zip(&vectors) {
                file.append(&self.identity_digest, &sha256_hex(text), v.values())?;
            }
        }
        Ok(vectors)
    }

    fn check_dim(&self, dim: usize) -> Result<(), EmbedError> {
        let mut known = self.dim.lock().unwrap();
        match *known {
            None => {
                *known = Some(dim);
                Ok(())
            }
            Some(d) if d == dim => Ok(()),
            Some(d) => Err(EmbedError::Contract(format!("dimension drift: expected {d}, provider returned {dim}"))),
        }
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        let va = self.embed_one(a)?;
        let vb = self.embed_one(b)?;
        cosine(&va, &vb)
    }

    /// The `k` vocabulary labels closest to `query`, best first; ties go to
    /// the lexicographically smaller label.
    pub fn top_k_similar_relations(
        &self,
        query: &str,
        vocab: &[String],
        k: usize,
    ) -> Result<Vec<(String, f64)>, EmbedError> {
        if vocab.is_empty() {
            return Err(EmbedError::Contract("empty relation vocabulary".into()));
        }
        let q = self.embed_one(query)?;
        let vectors = self.embed(vocab)?;
        let mut scored = Vec::with_capacity(vocab.len());
        for (label, v) in vocab.iter().zip(&vectors) {
            scored.push((label.clone(), cosine(&q, v)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap().abs() < 1e-12);
        assert!((cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])), Err(EmbedError::Contract(_))));
        assert!(matches!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(EmbedError::Domain(_))));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    /// Counts texts it receives; embeds with the mock scheme.
    struct Counting {
        texts: Arc<AtomicUsize>,
        calls: Arc<AtomicUsize>,
    }

    impl EmbeddingProvider for Counting {
        fn identity(&self) -> String {
            "counting".into()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts.fetch_add(texts.len(), Ordering::SeqCst);
            MockEmbeddingProvider::new(32).unwrap().embed_batch(texts)
        }
    }

    fn counting() -> (EmbeddingGateway, Arc<AtomicUsize>, Arc<AtomicUsize>) {
        let texts = Arc::new(AtomicUsize::new(0));
        let calls = Arc::new(AtomicUsize::new(0));
        let gw = EmbeddingGateway::new(Box::new(Counting { texts: texts.clone(), calls: calls.clone() }));
        (gw, texts, calls)
    }

    #[test]
    fn second_lookup_is_a_cache_hit() {
        let (gw, _, calls) = counting();
        gw.embed(&["alpha".into()]).unwrap();
        gw.embed(&["alpha".into()]).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn only_misses_reach_provider() {
        let (gw, texts, _) = counting();
        gw.embed(&["a".into()]).unwrap();
        let before = texts.load(Ordering::SeqCst);
        gw.embed(&["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(texts.load(Ordering::SeqCst) - before, 2);
    }

    #[test]
    fn duplicate_texts_in_batch_are_identical() {
        let gw = EmbeddingGateway::mock(64).unwrap();
        let out = gw.embed(&["same".into(), "same".into()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(gw.stats().provider_texts, 1);
    }

    #[test]
    fn empty_inputs_rejected() {
        let gw = EmbeddingGateway::mock(64).unwrap();
        assert!(gw.embed(&[]).is_err());
        assert!(gw.embed(&["".into()]).is_err());
    }

    struct Flaky {
        fails: AtomicUsize,
    }
    impl EmbeddingProvider for Flaky {
        fn identity(&self) -> String {
            "flaky".into()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            if self.fails.fetch_sub(1, Ordering::SeqCst) > 0 {
                return Err(ProviderError::Transport("reset".into()));
            }
            Ok(texts.iter().map(|_| vec![1.0, 0.0]).collect())
        }
    }

    #[test]
    fn transport_failures_retried_then_surfaced() {
        let gw =
            EmbeddingGateway::new(Box::new(Flaky { fails: AtomicUsize::new(2) })).with_retry(RetryPolicy::immediate(3));
        assert!(gw.embed_one("x").is_ok());
        assert_eq!(gw.stats().provider_calls, 3);

        let gw =
            EmbeddingGateway::new(Box::new(Flaky { fails: AtomicUsize::new(5) })).with_retry(RetryPolicy::immediate(3));
        assert!(matches!(gw.embed_one("x"), Err(EmbedError::Provider(ProviderError::Transport(_)))));
    }

    struct Drifting {
        n: AtomicUsize,
    }
    impl EmbeddingProvider for Drifting {
        fn identity(&self) -> String {
            "drift".into()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
            let dim = 2 + self.n.fetch_add(1, Ordering::SeqCst);
            Ok(texts.iter().map(|_| vec![1.0; dim]).collect())
        }
    }

    #[test]
    fn dimension_drift_is_contract_error() {
        let gw = EmbeddingGateway::new(Box::new(Drifting { n: AtomicUsize::new(0) }));
        gw.embed_one("a").unwrap();
        assert!(matches!(gw.embed_one("b"), Err(EmbedError::Contract(_))));
    }

    #[test]
    fn query_in_vocab_ranks_first() {
        let gw = EmbeddingGateway::mock(64).unwrap();
        let vocab: Vec<String> = ["people.person.spouse_s", "people.person.children", "location.location.containedby"]
            .map(String::from)
            .to_vec();
        let top = gw.top_k_similar_relations("people.person.children", &vocab, 2).unwrap();
        assert_eq!(top[0].0, "people.person.children");
        assert!((top[0].1 - 1.0).abs() < 1e-9);
        let all = gw.top_k_similar_relations("children", &vocab, vocab.len() + 5).unwrap();
        assert_eq!(all.len(), vocab.len());
        assert!(gw.top_k_similar_relations("x", &[], 1).is_err());
    }

    #[test]
    fn ties_broken_by_label() {
        let gw = EmbeddingGateway::mock(64).unwrap();
        let vocab: Vec<String> = ["b.x", "a.x", "c.x"].map(String::from).to_vec();
        // "x" is the only token not shared by position; a/b/c single letters differ
        let top = gw.top_k_similar_relations("zzz", &vocab, 3).unwrap();
        for w in top.windows(2) {
            assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }
}
