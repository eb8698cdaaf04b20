//! Text embedding providers: an offline hashed-token embedder and an HTTP
//! client for OpenAI-style `/embeddings` endpoints, both behind a persistent
//! cache.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingCache, EmbeddingTable, TableKind};
use crate::data::{filter_note_sections, Dataset};
use crate::error::{Error, Result};

pub trait TextEmbedder: Send + Sync {
    /// Provider tag used in cache keys.
    fn provider(&self) -> &str;
    fn model(&self) -> String;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

pub(crate) fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Deterministic offline embedder: every lower-cased alphanumeric token maps
/// to a seeded Gaussian direction on the unit sphere; a text is the
/// normalized mean of its token directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FallbackEmbedder {
    dim: usize,
    seed: u64,
}

impl FallbackEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(FallbackEmbedder { dim, seed })
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        l2_normalize(&mut v);
        v
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for tok in Self::tokens(text) {
            for (a, x) in acc.iter_mut().zip(self.token_vector(&tok)) {
                *a += x;
            }
        }
        l2_normalize(&mut acc);
        acc
    }
}

impl TextEmbedder for FallbackEmbedder {
    fn provider(&self) -> &str {
        "fallback"
    }

    fn model(&self) -> String {
        format!("hashed-tokens-seed{}", self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Settings for a remote embedding endpoint. The credential is read from the
/// environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub retry_backoff_ms: u64,
    /// Expected raw vector width; checked when set.
    pub raw_dim: Option<usize>,
    pub projection_seed: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            batch_size: 64,
            timeout_secs: 60,
            max_retries: 3,
            retry_backoff_ms: 500,
            raw_dim: None,
            projection_seed: 0,
        }
    }
}

#[cfg(feature = "remote")]
pub use remote::RemoteEmbedder;

#[cfg(feature = "remote")]
mod remote {
    use std::sync::OnceLock;
    use std::time::Duration;

    use super::*;

    /// Client for endpoints that accept `{"model", "input": [...]}` and answer
    /// `{"data": [{"index", "embedding"}]}`. Raw vectors are mapped to `dim`
    /// with a fixed seeded Gaussian projection, then L2-normalized.
    pub struct RemoteEmbedder {
        cfg: RemoteConfig,
        dim: usize,
        api_key: Option<String>,
        client: reqwest::blocking::Client,
        projection: OnceLock<Array2<f64>>,
    }

    #[derive(Deserialize)]
    struct Response {
        data: Vec<Item>,
    }

    #[derive(Deserialize)]
    struct Item {
        #[serde(default)]
        index: Option<usize>,
        embedding: Vec<f64>,
    }

    impl RemoteEmbedder {
        pub fn new(cfg: RemoteConfig, dim: usize) -> Result<Self> {
            if dim == 0 {
                return Err(Error::Config("embedding dimension must be positive".into()));
            }
            let api_key = if cfg.api_key_env.is_empty() {
                None
            } else {
                std::env::var(&cfg.api_key_env).ok()
            };
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(cfg.timeout_secs))
                .build()
                .map_err(|e| Error::Config(format!("http client: {e}")))?;
            Ok(RemoteEmbedder { cfg, dim, api_key, client, projection: OnceLock::new() })
        }

        fn request(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, String> {
            let body = serde_json::json!({ "model": self.cfg.model, "input": texts });
            let mut req = self.client.post(&self.cfg.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| e.to_string())?;
            let status = resp.status();
            if !status.is_success() {
                return Err(format!("HTTP {status}"));
            }
            let mut parsed: Response = resp.json().map_err(|e| e.to_string())?;
            if parsed.data.len() != texts.len() {
                return Err(format!("expected {} embeddings, got {}", texts.len(), parsed.data.len()));
            }
            if parsed.data.iter().all(|d| d.index.is_some()) {
                parsed.data.sort_by_key(|d| d.index);
            }
            Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
        }

        fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
            let p = self.projection.get_or_init(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.projection_seed);
                Array2::from_shape_simple_fn((raw.len(), self.dim), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z / (self.dim as f64).sqrt()
                })
            });
            if p.nrows() != raw.len() {
                return Err(Error::Shape(format!(
                    "endpoint returned width {} after earlier width {}",
                    raw.len(),
                    p.nrows()
                )));
            }
            let mut out = ndarray::ArrayView1::from(raw).dot(p).to_vec();
            l2_normalize(&mut out);
            Ok(out)
        }
    }

    impl TextEmbedder for RemoteEmbedder {
        fn provider(&self) -> &str {
            "remote"
        }

        fn model(&self) -> String {
            format!("{}@{}->{}", self.cfg.model, self.cfg.projection_seed, self.dim)
        }

        fn dim(&self) -> usize {
            self.dim
        }

        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
            let mut last_err = String::new();
            for attempt in 0..=self.cfg.max_retries {
                if attempt > 0 {
                    let wait = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                    std::thread::sleep(Duration::from_millis(wait));
                }
                match self.request(texts) {
                    Ok(raw) => {
                        if let Some(expected) = self.cfg.raw_dim {
                            if let Some(bad) = raw.iter().find(|v| v.len() != expected) {
                                return Err(Error::Shape(format!(
                                    "endpoint returned width {}, expected {expected}",
                                    bad.len()
                                )));
                            }
                        }
                        return raw.iter().map(|v| self.project(v)).collect();
                    }
                    Err(e) => {
                        log::warn!("embedding request failed (attempt {}): {e}", attempt + 1);
                        last_err = e;
                    }
                }
            }
            Err(Error::Provider { msg: last_err, failed_keys: Vec::new() })
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProviderStats {
    /// Batches sent to the underlying embedder.
    pub calls: usize,
    /// Texts the embedder computed.
    pub computed: usize,
    pub cache_hits: usize,
}

/// An embedder plus cache and call accounting.
pub struct EmbeddingProvider {
    embedder: Box<dyn TextEmbedder>,
    cache: EmbeddingCache,
    batch_size: usize,
    max_text_chars: Option<usize>,
    calls: AtomicUsize,
    computed: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl EmbeddingProvider {
    pub fn new(embedder: Box<dyn TextEmbedder>, cache: EmbeddingCache) -> Self {
        EmbeddingProvider {
            embedder,
            cache,
            batch_size: 64,
            max_text_chars: None,
            calls: AtomicUsize::new(0),
            computed: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn fallback(dim: usize, seed: u64) -> Result<Self> {
        Ok(Self::new(Box::new(FallbackEmbedder::new(dim, seed)?), EmbeddingCache::in_memory()))
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    /// Texts longer than `n` characters are truncated (with a warning).
    pub fn with_max_text_chars(mut self, n: Option<usize>) -> Self {
        self.max_text_chars = n;
        self
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn stats(&self) -> ProviderStats {
        ProviderStats {
            calls: self.calls.load(Ordering::Relaxed),
            computed: self.computed.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    fn prepare<'a>(&self, key: &str, text: &'a str) -> &'a str {
        match self.max_text_chars {
            Some(limit) if text.chars().count() > limit => {
                log::warn!("text for '{key}' truncated to {limit} characters");
                let end = text.char_indices().nth(limit).map_or(text.len(), |(i, _)| i);
                &text[..end]
            }
            _ => text,
        }
    }
}

/// Embeds `(key, text)` pairs. Blank texts map to the zero vector; the cache
/// is consulted before the embedder and updated (and flushed) afterwards,
/// even when some batches fail.
pub fn embed_texts(p: &EmbeddingProvider, kind: TableKind, texts: &[(String, String)]) -> Result<EmbeddingTable> {
    let dim = p.dim();
    let provider = p.embedder.provider().to_string();
    let model = p.embedder.model();
    let mut data = Array2::zeros((texts.len(), dim));

    // cache key -> (text, rows needing it)
    let mut missing: Vec<(String, &str, Vec<usize>)> = Vec::new();
    let mut missing_index: HashMap<String, usize> = HashMap::new();
    for (row, (key, text)) in texts.iter().enumerate() {
        let text = p.prepare(key, text);
        if text.trim().is_empty() {
            continue;
        }
        let ck = EmbeddingCache::key(kind.as_str(), &provider, &model, text);
        if let Some(v) = p.cache.get(&ck) {
            if v.len() != dim {
                return Err(Error::Shape(format!("cached vector width {} != {dim}", v.len())));
            }
            p.cache_hits.fetch_add(1, Ordering::Relaxed);
            data.row_mut(row).assign(&ndarray::ArrayView1::from(&v[..]));
            continue;
        }
        match missing_index.get(&ck) {
            Some(&i) => missing[i].2.push(row),
            None => {
                missing_index.insert(ck.clone(), missing.len());
                missing.push((ck, text, vec![row]));
            }
        }
    }

    let mut failed_keys = Vec::new();
    let mut first_err: Option<Error> = None;
    for chunk in missing.chunks(p.batch_size) {
        let batch: Vec<&str> = chunk.iter().map(|(_, t, _)| *t).collect();
        p.calls.fetch_add(1, Ordering::Relaxed);
        let result = p.embedder.embed_batch(&batch).and_then(|vs| {
            match vs.iter().find(|v| v.len() != dim) {
                Some(bad) => Err(Error::Shape(format!("provider returned width {}, expected {dim}", bad.len()))),
                None if vs.len() != batch.len() => Err(Error::Shape(format!(
                    "provider returned {} vectors for {} texts",
                    vs.len(),
                    batch.len()
                ))),
                None if vs.iter().flatten().any(|x| !x.is_finite()) => {
                    Err(Error::NonFinite("provider output".into()))
                }
                None => Ok(vs),
            }
        });
        match result {
            Ok(vectors) => {
                p.computed.fetch_add(vectors.len(), Ordering::Relaxed);
                for ((ck, _, rows), v) in chunk.iter().zip(vectors) {
                    for &r in rows {
                        data.row_mut(r).assign(&ndarray::ArrayView1::from(&v[..]));
                    }
                    p.cache.insert(ck.clone(), v);
                }
            }
            Err(e) => {
                for (_, _, rows) in chunk {
                    failed_keys.extend(rows.iter().map(|&r| texts[r].0.clone()));
                }
                first_err.get_or_insert(e);
            }
        }
    }
    p.cache.flush()?;

    if let Some(err) = first_err {
        return Err(match err {
            Error::Provider { msg, .. } => Error::Provider { msg, failed_keys },
            Error::Shape(msg) => Error::Provider { msg: format!("dimension mismatch: {msg}"), failed_keys },
            other => Error::Provider { msg: other.to_string(), failed_keys },
        });
    }
    EmbeddingTable::new(kind, texts.iter().map(|(k, _)| k.clone()).collect(), data)
}

/// Concept-name vectors for every registered code, keyed by code id.
pub fn embed_concepts(p: &EmbeddingProvider, ds: &Dataset) -> Result<EmbeddingTable> {
    let texts: Vec<(String, String)> =
        ds.codes().iter().map(|c| (c.code_id.clone(), c.concept_name.clone())).collect();
    embed_texts(p, TableKind::Concept, &texts)
}

/// Note vectors keyed by visit id, after dropping `blocked_sections`.
/// Visits whose note is empty after filtering get the zero vector.
pub fn embed_notes<S: AsRef<str>>(p: &EmbeddingProvider, ds: &Dataset, blocked_sections: &[S]) -> Result<EmbeddingTable> {
    let texts: Vec<(String, String)> = ds
        .visits()
        .iter()
        .map(|v| (v.visit_id.clone(), filter_note_sections(&v.note_text, blocked_sections)))
        .collect();
    embed_texts(p, TableKind::Note, &texts)
}
