use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, GatewayError};

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: ChatResponse,
    pub created_at: u64,
}

/// Hex SHA-256 over the full request: model, prompt, temperature, max_tokens.
pub fn cache_key(req: &ChatRequest) -> String {
    let canonical = serde_json::to_string(&(&req.model, &req.prompt, req.temperature, req.max_tokens))
        .expect("request fields serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Append-only JSONL response cache.
///
/// Reads are concurrent; appends are serialized through a single writer.
/// An unreadable line makes [`ResponseCache::open`] fail rather than skip it.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, ChatResponse>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |reason: String| GatewayError::CacheCorrupt {
                    path: path.display().to_string(),
                    line: idx + 1,
                    reason,
                };
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                if entry.key.len() != 64 || !entry.key.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(corrupt(format!("bad key {:?}", entry.key)));
                }
                entries.insert(entry.key, entry.response);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<ChatResponse> {
        let entries = self.entries.read().expect("cache lock poisoned");
        entries.get(key).map(|r| ChatResponse {
            from_cache: true,
            ..r.clone()
        })
    }

    pub fn insert(&self, key: &str, response: &ChatResponse) -> Result<(), GatewayError> {
        let stored = ChatResponse {
            from_cache: false,
            ..response.clone()
        };
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = writer.as_mut() {
            let created_at = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let entry = CacheEntry {
                key: key.to_string(),
                response: stored.clone(),
                created_at,
            };
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key.to_string(), stored);
        Ok(())
    }
}
