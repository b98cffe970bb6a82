//! The insight pool and its JSONL file format.
//!
//! ```text
//! {"schema":"panda-insight-pool/1","embedder_id":"...","embedding_dim":384}
//! {"id":"...","source_id":"...","key":"...","insight":"...","embedding":[...],"created_by":"..."}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::EmbeddingVector;

pub const POOL_SCHEMA: &str = "panda-insight-pool/1";

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("pool file is empty (no header line)")]
    MissingHeader,
    #[error("unsupported pool schema {0:?}")]
    UnsupportedSchema(String),
    #[error("malformed pool line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("entry {id:?} has embedding length {got}, pool dimension is {expected}")]
    DimMismatch { id: String, expected: usize, got: usize },
    #[error("duplicate pool entry id {0:?}")]
    DuplicateId(String),
    #[error("embedding dimension must be positive")]
    ZeroDim,
}

/// An LLM-written explanation of one expert preference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insight {
    pub id: String,
    pub source_id: String,
    /// Text embedded for retrieval (the query, or the latest observation).
    pub key: String,
    pub text: String,
    pub created_by: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub insight: Insight,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsightPool {
    pub schema_version: String,
    pub embedder_id: String,
    pub embedding_dim: usize,
    entries: Vec<PoolEntry>,
    ids: HashSet<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    embedder_id: String,
    embedding_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    id: String,
    source_id: String,
    key: String,
    insight: String,
    embedding: Vec<f64>,
    created_by: String,
}

impl InsightPool {
    pub fn new(embedder_id: impl Into<String>, embedding_dim: usize) -> Result<Self, PoolError> {
        if embedding_dim == 0 {
            return Err(PoolError::ZeroDim);
        }
        Ok(Self {
            schema_version: POOL_SCHEMA.to_string(),
            embedder_id: embedder_id.into(),
            embedding_dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn push(&mut self, insight: Insight, embedding: EmbeddingVector) -> Result<(), PoolError> {
        if embedding.dim() != self.embedding_dim {
            return Err(PoolError::DimMismatch {
                id: insight.id,
                expected: self.embedding_dim,
                got: embedding.dim(),
            });
        }
        if !self.ids.insert(insight.id.clone()) {
            return Err(PoolError::DuplicateId(insight.id));
        }
        self.entries.push(PoolEntry { insight, embedding });
        Ok(())
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.insight.id == id)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, PoolError> {
        let mut lines = reader.lines().enumerate();
        let header_line = loop {
            match lines.next() {
                None => return Err(PoolError::MissingHeader),
                Some((_, line)) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
            }
        };
        let header: Header = serde_json::from_str(&header_line).map_err(|e| PoolError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?;
        if header.schema != POOL_SCHEMA {
            return Err(PoolError::UnsupportedSchema(header.schema));
        }
        let mut pool = InsightPool::new(header.embedder_id, header.embedding_dim)?;
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| PoolError::Malformed { line: idx + 1, reason };
            let entry: EntryLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            let embedding = EmbeddingVector::new(entry.embedding).map_err(|e| malformed(e.to_string()))?;
            pool.push(
                Insight {
                    id: entry.id,
                    source_id: entry.source_id,
                    key: entry.key,
                    text: entry.insight,
                    created_by: entry.created_by,
                },
                embedding,
            )?;
        }
        Ok(pool)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoolError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<(), PoolError> {
        let header = Header {
            schema: self.schema_version.clone(),
            embedder_id: self.embedder_id.clone(),
            embedding_dim: self.embedding_dim,
        };
        writeln!(writer, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for e in &self.entries {
            let line = EntryLine {
                id: e.insight.id.clone(),
                source_id: e.insight.source_id.clone(),
                key: e.insight.key.clone(),
                insight: e.insight.text.clone(),
                embedding: e.embedding.values().to_vec(),
                created_by: e.insight.created_by.clone(),
            };
            writeln!(writer, "{}", serde_json::to_string(&line).expect("entry serializes"))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PoolError> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("pool serializes to utf-8")
    }
}
