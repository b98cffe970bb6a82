//! Labelled classification datasets (`{"id":..,"text":..,"gold":int}` per line).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("malformed dataset line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("example {id:?} has gold label {gold}, outside 0..{num_classes}")]
    LabelOutOfRange { id: String, gold: i64, num_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub gold: i64,
}

/// A dataset that remembers each example's original line, so unchanged
/// examples can be written back byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    raw_lines: Vec<String>,
}

impl Dataset {
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut examples = Vec::new();
        let mut raw_lines = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: LabeledExample = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            if !seen.insert(ex.id.clone()) {
                return Err(DatasetError::DuplicateId(ex.id));
            }
            examples.push(ex);
            raw_lines.push(line.to_string());
        }
        Ok(Self { examples, raw_lines })
    }

    pub fn from_examples(examples: Vec<LabeledExample>) -> Self {
        let raw_lines = examples
            .iter()
            .map(|e| serde_json::to_string(e).expect("example serializes"))
            .collect();
        Self { examples, raw_lines }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<(), DatasetError> {
        for ex in &self.examples {
            if ex.gold < 0 || ex.gold as usize >= num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    id: ex.id.clone(),
                    gold: ex.gold,
                    num_classes,
                });
            }
        }
        Ok(())
    }

    /// Serializes `examples` in order, reusing the original line for any
    /// example equal to the one parsed at the same position.
    pub fn render_with(&self, examples: &[LabeledExample]) -> String {
        let mut out = String::new();
        for (i, ex) in examples.iter().enumerate() {
            match (self.examples.get(i), self.raw_lines.get(i)) {
                (Some(orig), Some(raw)) if orig == ex => out.push_str(raw),
                _ => out.push_str(&serde_json::to_string(ex).expect("example serializes")),
            }
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        self.render_with(&self.examples)
    }
}
