//! Expert output records and the preference rankings built from them.
//!
//! A classifier expert contributes one candidate per class scored by its raw
//! logit; a generative expert contributes its beam hypotheses scored by
//! sequence log-probability. Either way the ranking is a stable argsort on
//! score with ties going to the lower original index.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreferenceError {
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {0:?} has no candidates")]
    EmptyCandidates(String),
    #[error("requested top-{requested} but only {available} candidates are available")]
    NTooLarge { requested: usize, available: usize },
    #[error("top-n must be at least 1")]
    ZeroN,
    #[error("{classes} class names but {logits} logits")]
    LengthMismatch { classes: usize, logits: usize },
    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("non-finite score for candidate {0:?}")]
    NonFiniteScore(String),
    #[error("candidate text must not be empty")]
    EmptyCandidateText,
    #[error("label {label:?} is not a candidate of record {id:?}")]
    UnknownLabel { id: String, label: String },
}

/// One response the expert could have produced, with its preference score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub text: String,
    pub score: f64,
}

impl CandidateResponse {
    pub fn new(text: impl Into<String>, score: f64) -> Result<Self, PreferenceError> {
        let text = text.into();
        if text.is_empty() {
            return Err(PreferenceError::EmptyCandidateText);
        }
        if !score.is_finite() {
            return Err(PreferenceError::NonFiniteScore(text));
        }
        Ok(Self { text, score })
    }
}

/// A training query together with the expert's scored candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutputRecord {
    pub id: String,
    pub task: String,
    pub query: String,
    pub candidates: Vec<CandidateResponse>,
    #[serde(default)]
    pub gold: Option<String>,
}

impl ExpertOutputRecord {
    /// The candidate text with the highest score (first index wins ties).
    pub fn top_prediction(&self) -> Option<&str> {
        ranked_indices(&self.candidates).first().map(|&i| self.candidates[i].text.as_str())
    }

    fn validate(&self) -> Result<(), PreferenceError> {
        if self.candidates.is_empty() {
            return Err(PreferenceError::EmptyCandidates(self.id.clone()));
        }
        for c in &self.candidates {
            if c.text.is_empty() {
                return Err(PreferenceError::EmptyCandidateText);
            }
            if !c.score.is_finite() {
                return Err(PreferenceError::NonFiniteScore(c.text.clone()));
            }
        }
        Ok(())
    }
}

/// The expert's top-n candidates in preference order.
///
/// `ranked[0]` is the most preferred response and `ranked[1]`, when present,
/// the runner-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRanking {
    pub record_id: String,
    pub ranked: Vec<CandidateResponse>,
    pub n: usize,
}

impl PreferenceRanking {
    pub fn preferred(&self) -> &CandidateResponse {
        &self.ranked[0]
    }

    pub fn runner_up(&self) -> Option<&CandidateResponse> {
        self.ranked.get(1)
    }
}

/// Parses line-delimited expert output records.
///
/// Blank lines are ignored; line numbers in errors are 1-based.
pub fn parse_expert_records<R: BufRead>(reader: R) -> Result<Vec<ExpertOutputRecord>, PreferenceError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| PreferenceError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExpertOutputRecord =
            serde_json::from_str(&line).map_err(|e| PreferenceError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        record.validate()?;
        if !seen.insert(record.id.clone()) {
            return Err(PreferenceError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn parse_expert_records_str(text: &str) -> Result<Vec<ExpertOutputRecord>, PreferenceError> {
    parse_expert_records(text.as_bytes())
}

fn ranked_indices(candidates: &[CandidateResponse]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // stable sort keeps the lower index first on equal scores
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score));
    order
}

/// Keeps the top `n` candidates by descending score.
pub fn rank_candidates(record: &ExpertOutputRecord, n: usize) -> Result<PreferenceRanking, PreferenceError> {
    if n == 0 {
        return Err(PreferenceError::ZeroN);
    }
    if n > record.candidates.len() {
        return Err(PreferenceError::NTooLarge {
            requested: n,
            available: record.candidates.len(),
        });
    }
    let ranked = ranked_indices(&record.candidates)
        .into_iter()
        .take(n)
        .map(|i| record.candidates[i].clone())
        .collect();
    Ok(PreferenceRanking {
        record_id: record.id.clone(),
        ranked,
        n,
    })
}

/// Builds a record from a sequence classifier's per-class logits.
pub fn classifier_record_from_logits(
    id: impl Into<String>,
    task: impl Into<String>,
    query: impl Into<String>,
    class_names: &[String],
    logits: &[f64],
    gold: Option<String>,
) -> Result<ExpertOutputRecord, PreferenceError> {
    if class_names.len() != logits.len() {
        return Err(PreferenceError::LengthMismatch {
            classes: class_names.len(),
            logits: logits.len(),
        });
    }
    if class_names.len() < 2 {
        return Err(PreferenceError::TooFewClasses(class_names.len()));
    }
    let candidates = class_names
        .iter()
        .zip(logits)
        .map(|(name, &logit)| CandidateResponse::new(name.clone(), logit))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExpertOutputRecord {
        id: id.into(),
        task: task.into(),
        query: query.into(),
        candidates,
        gold,
    })
}

/// Returns a copy of `record` in which `label` outranks every other candidate.
///
/// The relative order of the remaining candidates is kept, so the runner-up is
/// still the expert's own best alternative. Used to learn from ground-truth or
/// synthetically flipped labels instead of the expert's top prediction.
pub fn promote_label(record: &ExpertOutputRecord, label: &str) -> Result<ExpertOutputRecord, PreferenceError> {
    let pos = record
        .candidates
        .iter()
        .position(|c| c.text == label)
        .ok_or_else(|| PreferenceError::UnknownLabel {
            id: record.id.clone(),
            label: label.to_string(),
        })?;
    let max = record
        .candidates
        .iter()
        .map(|c| c.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = record.clone();
    if ranked_indices(&out.candidates)[0] != pos {
        out.candidates[pos].score = max + 1.0;
    }
    Ok(out)
}
