//! Review embeddings: provider abstraction, a deterministic offline embedder
//! and a client for remote embedding endpoints.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::gateway::{CacheKey, ContentCache, ProviderError, RetryPolicy, Semaphore};

pub const CLUSTERING_INSTRUCTION: &str = "Represent the app user review for clustering";
pub const OFFLINE_DIM: usize = 256;
pub const REMOTE_BATCH_SIZE: usize = 64;
const EMBED_DOMAIN: &str = "embed/v1";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("nothing to embed")]
    Empty,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite value in embedding row {0}")]
    NonFinite(usize),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("provider returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding provider failed after {attempts} attempts: {last}")]
    Provider { attempts: usize, last: ProviderError },
}

/// Row-aligned embedding vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, EmbedError> {
        if ids.len() != vectors.len() {
            return Err(EmbedError::CountMismatch {
                expected: ids.len(),
                got: vectors.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbedError::DuplicateId(id.clone()));
            }
        }
        let dim = vectors.first().map_or(0, Vec::len);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch(dim, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite(i));
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<Vec<f64>>) {
        (self.ids, self.vectors)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn model(&self) -> &str;
    /// Whether inputs should be prefixed with the task instruction.
    fn uses_instruction(&self) -> bool {
        true
    }
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed-hash bag of character 3-grams over the lowercased text, padded with
/// one space on each side, L2-normalized. Texts shorter than three characters
/// hash as a single gram.
pub fn offline_embed(text: &str) -> Vec<f64> {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut v = vec![0.0; OFFLINE_DIM];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = fnv1a(s.as_bytes());
        let bucket = (h % OFFLINE_DIM as u64) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    };
    if padded.len() < 3 {
        add(&padded);
    } else {
        padded.windows(3).for_each(&mut add);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // all grams cancelled out; fall back to a fixed unit vector
        v[(fnv1a(text.as_bytes()) % OFFLINE_DIM as u64) as usize] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineEmbedder;

impl EmbeddingProvider for OfflineEmbedder {
    fn id(&self) -> &str {
        "offline"
    }

    fn model(&self) -> &str {
        "char3-signed-hash-256"
    }

    fn uses_instruction(&self) -> bool {
        false
    }

    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(inputs.iter().map(|t| offline_embed(t)).collect())
    }
}

/// Remote endpoint accepting `{model, input: [...]}` and answering with one
/// vector per input (`data[].embedding`, ordered by `index` when present).
pub struct HttpEmbeddingProvider {
    id: String,
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: &str, model: &str, api_key: String, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            id: format!("remote:{endpoint}"),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }
}

pub(crate) fn parse_embedding_response(body: &serde_json::Value) -> Result<Vec<Vec<f64>>, ProviderError> {
    let bad = |m: &str| ProviderError::Transport(format!("malformed embedding response: {m}"));
    let data = body
        .get("data")
        .and_then(|d| d.as_array())
        .ok_or_else(|| bad("missing data array"))?;
    let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
    for (i, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(|x| x.as_u64()).unwrap_or(i as u64);
        let vector = item
            .get("embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| bad("missing embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("non-numeric value")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((index, vector));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&json!({"model": self.model, "input": inputs}))
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry_after = resp.headers().get(reqwest::header::RETRY_AFTER).cloned();
            let body = resp.text().unwrap_or_default();
            return Err(crate::gateway::classify_status(status, retry_after.as_ref(), &body));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        parse_embedding_response(&body)
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Serialize, Deserialize)]
struct CachedVector {
    provider: String,
    model: String,
    vector: Vec<f64>,
}

/// Embeds texts in batches with caching, retries and bounded concurrency.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Option<ContentCache>,
    retry: RetryPolicy,
    limiter: Semaphore,
    instruction: String,
    batch_size: usize,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            provider,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Semaphore::new(crate::gateway::DEFAULT_MAX_IN_FLIGHT),
            instruction: CLUSTERING_INSTRUCTION.to_string(),
            batch_size: REMOTE_BATCH_SIZE,
        }
    }

    pub fn with_cache(mut self, cache: ContentCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Semaphore::new(n);
        self
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    fn input_for(&self, text: &str) -> String {
        if self.provider.uses_instruction() {
            format!("{}: {}", self.instruction, text)
        } else {
            text.to_string()
        }
    }

    fn key(&self, text: &str) -> CacheKey {
        CacheKey::from_fields(
            EMBED_DOMAIN,
            &[
                self.provider.id().as_bytes(),
                self.provider.model().as_bytes(),
                self.instruction.as_bytes(),
                text.as_bytes(),
            ],
        )
    }

    fn fetch(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let vectors = self
            .retry
            .run(|| {
                let _permit = self.limiter.acquire();
                self.provider.embed(inputs)
            })
            .map_err(|(attempts, last)| EmbedError::Provider { attempts, last })?;
        if vectors.len() != inputs.len() {
            return Err(EmbedError::CountMismatch {
                expected: inputs.len(),
                got: vectors.len(),
            });
        }
        Ok(vectors)
    }

    /// Embeds `(id, text)` pairs; the result rows follow input order. Any
    /// batch failure fails the whole call.
    pub fn embed_reviews(&self, items: &[(String, String)]) -> Result<EmbeddingMatrix, EmbedError> {
        if items.is_empty() {
            return Err(EmbedError::Empty);
        }
        let mut rows: Vec<Option<Vec<f64>>> = items
            .iter()
            .map(|(_, text)| self.cache.as_ref().and_then(|c| c.get::<CachedVector>(&self.key(text))))
            .map(|hit| hit.map(|c| c.vector))
            .collect();
        let missing: Vec<usize> = (0..items.len()).filter(|&i| rows[i].is_none()).collect();
        let fetched: Vec<Vec<Vec<f64>>> = missing
            .par_chunks(self.batch_size)
            .map(|chunk| {
                let inputs: Vec<String> = chunk.iter().map(|&i| self.input_for(&items[i].1)).collect();
                self.fetch(&inputs)
            })
            .collect::<Result<_, _>>()?;
        for (&i, vector) in missing.iter().zip(fetched.into_iter().flatten()) {
            if let Some(cache) = &self.cache {
                let entry = CachedVector {
                    provider: self.provider.id().to_string(),
                    model: self.provider.model().to_string(),
                    vector: vector.clone(),
                };
                if let Err(e) = cache.put(&self.key(&items[i].1), &entry) {
                    log::warn!("could not cache embedding: {e}");
                }
            }
            rows[i] = Some(vector);
        }
        EmbeddingMatrix::new(
            items.iter().map(|(id, _)| id.clone()).collect(),
            rows.into_iter().map(|r| r.expect("every row filled")).collect(),
        )
    }
}
