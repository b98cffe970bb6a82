//! Sentence embeddings and exact top-k cosine retrieval over an insight pool.

use std::cmp::Ordering;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{post_json, ProviderFailure};
use crate::pool::InsightPool;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding must have at least one dimension")]
    Empty,
    #[error("retrieval k must be at least 1")]
    ZeroK,
    #[error("min_similarity {0} outside [-1, 1]")]
    BadThreshold(f64),
}

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.is_empty() {
            return Err(RetrievalError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, RetrievalError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded in pool headers.
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError>;
}

/// Embeds one text, checking the provider's declared dimension.
pub fn embed_text(text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, RetrievalError> {
    let mut out = embed_texts(&[text], provider)?;
    Ok(out.pop().expect("one vector per text"))
}

pub fn embed_texts(texts: &[&str], provider: &dyn EmbeddingProvider) -> Result<Vec<EmbeddingVector>, RetrievalError> {
    let raw = provider.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(RetrievalError::ProviderUnavailable(format!(
            "asked for {} embeddings, got {}",
            texts.len(),
            raw.len()
        )));
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != provider.dim() {
                return Err(RetrievalError::DimMismatch {
                    expected: provider.dim(),
                    got: v.len(),
                });
            }
            EmbeddingVector::new(v)
        })
        .collect()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(cosine(a.values(), b.values()))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // sqrt of the product keeps cos(a, a) exactly 1
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub k: usize,
    pub min_similarity: Option<f64>,
}

impl RetrievalConfig {
    pub const AGENT_DEFAULT_K: usize = 1;
    pub const CLASSIFICATION_DEFAULT_K: usize = 6;

    pub fn new(k: usize) -> Self {
        Self { k, min_similarity: None }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if let Some(t) = self.min_similarity {
            if !(-1.0..=1.0).contains(&t) {
                return Err(RetrievalError::BadThreshold(t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }
}

fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id))
}

/// Embeds `key` and returns the `cfg.k` most similar pool entries.
pub fn top_k_retrieve(
    pool: &InsightPool,
    key: &str,
    cfg: &RetrievalConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<RetrievalResult, RetrievalError> {
    cfg.validate()?;
    if provider.dim() != pool.embedding_dim {
        return Err(RetrievalError::DimMismatch {
            expected: pool.embedding_dim,
            got: provider.dim(),
        });
    }
    if pool.is_empty() {
        return Ok(RetrievalResult::default());
    }
    let query = embed_text(key, provider)?;
    retrieve_by_vector(pool, &query, cfg)
}

/// Exact flat scan: highest similarity first, ties by ascending id.
pub fn retrieve_by_vector(
    pool: &InsightPool,
    query: &EmbeddingVector,
    cfg: &RetrievalConfig,
) -> Result<RetrievalResult, RetrievalError> {
    cfg.validate()?;
    if query.dim() != pool.embedding_dim {
        return Err(RetrievalError::DimMismatch {
            expected: pool.embedding_dim,
            got: query.dim(),
        });
    }
    let mut hits: Vec<Hit> = pool
        .entries()
        .iter()
        .map(|e| Hit {
            id: e.insight.id.clone(),
            similarity: cosine(query.values(), e.embedding.values()),
        })
        .filter(|h| cfg.min_similarity.is_none_or(|t| h.similarity >= t))
        .collect();
    if hits.len() > cfg.k {
        hits.select_nth_unstable_by(cfg.k - 1, hit_order);
        hits.truncate(cfg.k);
    }
    hits.sort_by(hit_order);
    Ok(RetrievalResult { hits })
}

/// Offline embedder: signed feature hashing of lowercase word tokens,
/// L2-normalized. Texts sharing words get positive similarity.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            id: format!("hash-bow-v1/{dim}"),
            dim,
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Remote embedder: `{"input":[..],"model":..}` → `{"data":[{"embedding":[..]}]}`.
pub struct HttpEmbedder {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
    batch_size: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dim: usize) -> Self {
        let model = model.into();
        Self {
            id: format!("http:{model}"),
            endpoint: endpoint.into(),
            api_key,
            model,
            dim,
            batch_size: 64,
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(60)))
                .build()
                .into(),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let body = json!({"input": chunk, "model": self.model});
            let value = post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)
                .map_err(|e: ProviderFailure| RetrievalError::ProviderUnavailable(e.to_string()))?;
            let parsed: EmbeddingBody = serde_json::from_value(value)
                .map_err(|e| RetrievalError::ProviderUnavailable(format!("bad embedding response: {e}")))?;
            out.extend(parsed.data.into_iter().map(|d| d.embedding));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::Insight;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    // independent reference: explicit norms, plain division
    fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / na / nb
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[0.3, -2.0, 7.5]), &v(&[0.3, -2.0, 7.5])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - oracle_cosine(&[1.0, 1.0], &[1.0, 0.0])).abs() < 1e-15);
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(RetrievalError::DimMismatch { .. })
        ));
    }

    #[test]
    fn vector_invariants() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(RetrievalError::Empty));
        assert_eq!(EmbeddingVector::new(vec![f64::INFINITY]), Err(RetrievalError::NonFinite));
    }

    struct WrongDim;
    impl EmbeddingProvider for WrongDim {
        fn id(&self) -> &str {
            "wrong"
        }
        fn dim(&self) -> usize {
            384
        }
        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
            Ok(texts.iter().map(|_| vec![0.5; 512]).collect())
        }
    }

    #[test]
    fn embed_text_contract() {
        let e = HashEmbedder::new(32);
        assert_eq!(embed_text("hello world", &e).unwrap(), embed_text("hello world", &e).unwrap());
        let empty = embed_text("", &e).unwrap();
        assert_eq!(empty.dim(), 32);
        assert_eq!(
            embed_text("x", &WrongDim),
            Err(RetrievalError::DimMismatch { expected: 384, got: 512 })
        );
    }

    fn pool_of(keys: &[(&str, &str)], embedder: &HashEmbedder) -> InsightPool {
        let mut pool = InsightPool::new(embedder.id(), embedder.dim()).unwrap();
        for (id, key) in keys {
            pool.push(
                Insight {
                    id: id.to_string(),
                    source_id: id.to_string(),
                    key: key.to_string(),
                    text: format!("insight {id}"),
                    created_by: "t".into(),
                },
                embed_text(key, embedder).unwrap(),
            )
            .unwrap();
        }
        pool
    }

    #[test]
    fn identical_key_ranks_first() {
        let e = HashEmbedder::new(64);
        let pool = pool_of(&[("e0", "the cat sat"), ("e1", "open the vault door")], &e);
        let res = top_k_retrieve(&pool, "open the vault door", &RetrievalConfig::new(1), &e).unwrap();
        assert_eq!(res.ids(), ["e1"]);
        assert_eq!(res.hits[0].similarity, 1.0);
    }

    #[test]
    fn fewer_entries_than_k() {
        let e = HashEmbedder::new(16);
        let pool = pool_of(&[("a", "w x"), ("b", "y"), ("c", "z"), ("d", "w")], &e);
        let res = top_k_retrieve(&pool, "w", &RetrievalConfig::new(6), &e).unwrap();
        assert_eq!(res.hits.len(), 4);
        for w in res.hits.windows(2) {
            assert!(w[0].similarity >= w[1].similarity);
        }
    }

    #[test]
    fn threshold_and_empty_pool() {
        let e = HashEmbedder::new(64);
        let pool = pool_of(&[("a", "alpha beta"), ("b", "gamma delta")], &e);
        let cfg = RetrievalConfig { k: 6, min_similarity: Some(0.99) };
        assert_eq!(top_k_retrieve(&pool, "alpha beta", &cfg, &e).unwrap().ids(), ["a"]);
        let empty = InsightPool::new(e.id(), 64).unwrap();
        assert!(top_k_retrieve(&empty, "x", &cfg, &e).unwrap().hits.is_empty());
        assert_eq!(
            top_k_retrieve(&pool, "x", &RetrievalConfig::new(0), &e),
            Err(RetrievalError::ZeroK)
        );
        assert!(top_k_retrieve(&pool, "x", &cfg, &HashEmbedder::new(8)).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let e = HashEmbedder::new(32);
        let pool = pool_of(&[("z", "same"), ("m", "same"), ("a", "same")], &e);
        let res = top_k_retrieve(&pool, "same", &RetrievalConfig::new(2), &e).unwrap();
        assert_eq!(res.ids(), ["a", "m"]);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            pair in (1usize..40).prop_flat_map(|d| (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            )),
            c in 0.001f64..1000.0,
        ) {
            let (a, b) = (v(&pair.0), v(&pair.1));
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
            prop_assert!((cosine_similarity(&a.scaled(c).unwrap(), &b).unwrap() - ab).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ab - oracle_cosine(&pair.0, &pair.1)).abs() <= 1e-12);
        }

        #[test]
        fn retrieval_is_read_only_and_repeatable(keys in prop::collection::vec("[a-c ]{0,6}", 1..20), q in "[a-c ]{0,6}") {
            let e = HashEmbedder::new(8);
            let named: Vec<(String, String)> = keys.iter().enumerate().map(|(i, k)| (format!("id{i:02}"), k.clone())).collect();
            let refs: Vec<(&str, &str)> = named.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let pool = pool_of(&refs, &e);
            let before = pool.clone();
            let cfg = RetrievalConfig::new(3);
            let r1 = top_k_retrieve(&pool, &q, &cfg, &e).unwrap();
            let r2 = top_k_retrieve(&pool, &q, &cfg, &e).unwrap();
            prop_assert_eq!(&r1, &r2);
            prop_assert_eq!(&pool, &before);
        }
    }
}
