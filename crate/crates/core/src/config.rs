//! Pipeline settings layered as CLI flag > `PANDA_<KEY>` env var > config
//! file > default. Config files hold `key = value` lines; `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{ChatProvider, Gateway, HttpChatProvider, MockProvider, ResponseCache, RetryPolicy};
use crate::retrieval::{EmbeddingProvider, HashEmbedder, HttpEmbedder};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("missing required setting {0} (set it in the config file or PANDA_{1})")]
    Missing(&'static str, String),
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Every recognised key with its default.
const KEYS: &[(&str, Option<&str>)] = &[
    ("llm_endpoint", None),
    ("llm_key", None),
    ("llm_model", None),
    ("mock", None),
    ("embedder", Some("hash")),
    ("embed_dim", Some("256")),
    ("embed_endpoint", None),
    ("embed_key", None),
    ("embed_model", None),
    ("cache", None),
    ("workers", Some("4")),
    ("top_n", Some("2")),
    ("k", None),
    ("seed", Some("0")),
    ("temperature", Some("0")),
    ("max_retries", Some("3")),
    ("timeout_secs", Some("120")),
];

const SECRET_KEYS: &[&str] = &["llm_key", "embed_key"];

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderChoice {
    Hash,
    Http { endpoint: String, api_key: Option<String>, model: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub llm_endpoint: Option<String>,
    pub llm_key: Option<String>,
    pub llm_model: Option<String>,
    /// Mock provider spec (`echo-label:N`, `digest`, `script:path`); overrides the HTTP LLM.
    pub mock: Option<String>,
    pub embedder: EmbedderChoice,
    pub embed_dim: usize,
    pub cache: Option<PathBuf>,
    pub workers: usize,
    pub top_n: usize,
    pub k: Option<usize>,
    pub seed: u64,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout: Duration,
    resolved: BTreeMap<String, String>,
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.display().to_string(),
            line: idx + 1,
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl PipelineConfig {
    /// Resolves settings from the layers. `env` is consulted for `PANDA_<KEY>`.
    pub fn resolve(
        file: Option<&Path>,
        env: &dyn Fn(&str) -> Option<String>,
        cli: &[(&str, String)],
    ) -> Result<Self, ConfigError> {
        let known = |k: &str| KEYS.iter().any(|(name, _)| *name == k);
        let mut map: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        if let Some(path) = file {
            for (k, v) in parse_file(path)? {
                if !known(&k) {
                    return Err(ConfigError::UnknownKey(k));
                }
                map.insert(k, v);
            }
        }
        for (k, _) in KEYS {
            if let Some(v) = env(&format!("PANDA_{}", k.to_uppercase())) {
                map.insert(k.to_string(), v);
            }
        }
        for (k, v) in cli {
            if !known(k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            map.insert(k.to_string(), v.clone());
        }
        Self::from_map(map)
    }

    /// Resolves using the process environment.
    pub fn from_env(file: Option<&Path>, cli: &[(&str, String)]) -> Result<Self, ConfigError> {
        Self::resolve(file, &|k| std::env::var(k).ok(), cli)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let get = |k: &str| map.get(k).filter(|v| !v.is_empty()).cloned();
        let embed_dim: usize = parse_num("embed_dim", &map["embed_dim"])?;
        if embed_dim == 0 {
            return Err(ConfigError::Invalid {
                key: "embed_dim".into(),
                value: "0".into(),
                reason: "must be positive".into(),
            });
        }
        let embedder = match map["embedder"].as_str() {
            "hash" => EmbedderChoice::Hash,
            "http" => EmbedderChoice::Http {
                endpoint: get("embed_endpoint").ok_or(ConfigError::Missing("embed_endpoint", "EMBED_ENDPOINT".into()))?,
                api_key: get("embed_key"),
                model: get("embed_model").ok_or(ConfigError::Missing("embed_model", "EMBED_MODEL".into()))?,
            },
            other => {
                return Err(ConfigError::Invalid {
                    key: "embedder".into(),
                    value: other.into(),
                    reason: "expected `hash` or `http`".into(),
                })
            }
        };
        let temperature: f64 = parse_num("temperature", &map["temperature"])?;
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(ConfigError::Invalid {
                key: "temperature".into(),
                value: map["temperature"].clone(),
                reason: "must be a non-negative number".into(),
            });
        }
        let k = get("k").map(|v| parse_num::<usize>("k", &v)).transpose()?;
        if k == Some(0) {
            return Err(ConfigError::Invalid {
                key: "k".into(),
                value: "0".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            llm_endpoint: get("llm_endpoint"),
            llm_key: get("llm_key"),
            llm_model: get("llm_model"),
            mock: get("mock"),
            embedder,
            embed_dim,
            cache: get("cache").map(PathBuf::from),
            workers: parse_num("workers", &map["workers"])?,
            top_n: parse_num("top_n", &map["top_n"])?,
            k,
            seed: parse_num("seed", &map["seed"])?,
            temperature,
            max_retries: parse_num("max_retries", &map["max_retries"])?,
            timeout: Duration::from_secs(parse_num("timeout_secs", &map["timeout_secs"])?),
            resolved: map,
        })
    }

    /// SHA-256 over the resolved non-secret settings.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.resolved {
            if SECRET_KEYS.contains(&k.as_str()) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// The chat provider: the mock when configured, otherwise the HTTP endpoint.
    pub fn chat_provider(&self) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        if let Some(spec) = &self.mock {
            let mock = MockProvider::from_spec(spec).map_err(|reason| ConfigError::Invalid {
                key: "mock".into(),
                value: spec.clone(),
                reason,
            })?;
            let mock = match &self.llm_model {
                Some(m) => mock.with_model(m.clone()),
                None => mock,
            };
            return Ok(Arc::new(mock));
        }
        let endpoint = self
            .llm_endpoint
            .clone()
            .ok_or(ConfigError::Missing("llm_endpoint", "LLM_ENDPOINT".into()))?;
        let model = self
            .llm_model
            .clone()
            .ok_or(ConfigError::Missing("llm_model", "LLM_MODEL".into()))?;
        Ok(Arc::new(HttpChatProvider::new(endpoint, self.llm_key.clone(), model).with_timeout(self.timeout)))
    }

    pub fn gateway(&self, provider: Arc<dyn ChatProvider>) -> Result<Gateway, crate::gateway::GatewayError> {
        let mut gw = Gateway::new(provider).with_retry(RetryPolicy {
            max_retries: self.max_retries,
            ..RetryPolicy::default()
        });
        if let Some(path) = &self.cache {
            gw = gw.with_cache(Arc::new(ResponseCache::open(path)?));
        }
        Ok(gw)
    }

    pub fn embedding_provider(&self) -> Box<dyn EmbeddingProvider> {
        match &self.embedder {
            EmbedderChoice::Hash => Box::new(HashEmbedder::new(self.embed_dim)),
            EmbedderChoice::Http { endpoint, api_key, model } => {
                Box::new(HttpEmbedder::new(endpoint.clone(), api_key.clone(), model.clone(), self.embed_dim))
            }
        }
    }
}
