//! Prompt templates with exact-brace placeholders.
//!
//! A placeholder is `{name}` where `name` is one of [`PLACEHOLDERS`]. Any
//! other brace pair is literal text. Substitution is a single pass: values
//! are never re-scanned, so a value may itself contain braces (label mappings
//! such as `{negative: 0, positive: 1}` do).

use thiserror::Error;

pub const QUERY: &str = "Query";
pub const RETRIEVED_INSIGHTS: &str = "Retrieved Insights";
pub const INIT_PROMPT: &str = "Init Prompt";
pub const CURRENT_TRAJECTORY: &str = "Current Trajectory";
pub const TASK_NAME: &str = "task name";
pub const MAPPING_IN_TASK: &str = "mapping in task";
pub const CANDIDATE_ANSWER: &str = "candidate answer";
pub const EXPERT_PREFERENCE: &str = "Expert Preference";
pub const TASK_PROMPT: &str = "zero-shot/few-shot/cot prompt";

pub const PLACEHOLDERS: &[&str] = &[
    QUERY,
    RETRIEVED_INSIGHTS,
    INIT_PROMPT,
    CURRENT_TRAJECTORY,
    TASK_NAME,
    MAPPING_IN_TASK,
    CANDIDATE_ANSWER,
    EXPERT_PREFERENCE,
    TASK_PROMPT,
];

pub const TWEETEVAL_ZERO_SHOT: &str = "tweeteval/zero-shot";
pub const TWEETEVAL_ZS_COT: &str = "tweeteval/zs-cot";
pub const TWEETEVAL_LEARNING: &str = "tweeteval/learning";
pub const TWEETEVAL_PANDA_INFERENCE: &str = "tweeteval/panda-inference";
pub const SCIENCEWORLD_LEARNING: &str = "scienceworld/learning";
pub const SCIENCEWORLD_INFERENCE: &str = "scienceworld/inference";
pub const SCIENCEWORLD_PANDA_INFERENCE: &str = "scienceworld/panda-inference";

static REGISTRY: &[(&str, &str)] = &[
    (TWEETEVAL_ZERO_SHOT, include_str!("../templates/tweeteval_zero_shot.txt")),
    (TWEETEVAL_ZS_COT, include_str!("../templates/tweeteval_zs_cot.txt")),
    (TWEETEVAL_LEARNING, include_str!("../templates/tweeteval_learning.txt")),
    (
        TWEETEVAL_PANDA_INFERENCE,
        include_str!("../templates/tweeteval_panda_inference.txt"),
    ),
    (SCIENCEWORLD_LEARNING, include_str!("../templates/scienceworld_learning.txt")),
    (SCIENCEWORLD_INFERENCE, include_str!("../templates/scienceworld_inference.txt")),
    (
        SCIENCEWORLD_PANDA_INFERENCE,
        include_str!("../templates/scienceworld_panda_inference.txt"),
    ),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("no value supplied for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    id: &'static str,
    text: &'static str,
}

impl Template {
    pub fn get(id: &str) -> Result<Self, TemplateError> {
        REGISTRY
            .iter()
            .find(|(name, _)| *name == id)
            .map(|&(id, text)| Template { id, text })
            .ok_or_else(|| TemplateError::UnknownTemplate(id.to_string()))
    }

    pub fn id(&self) -> &'static str {
        self.id
    }

    pub fn text(&self) -> &'static str {
        self.text
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        render(self.text, values)
    }
}

pub fn registered_ids() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(id, _)| *id)
}

/// Substitutes placeholders in `template`.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            // a lone brace with no closing partner is literal
            if PLACEHOLDERS.iter().any(|p| after.starts_with(p)) {
                return Err(TemplateError::Unterminated(offset + open));
            }
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let name = &after[..close];
        if PLACEHOLDERS.contains(&name) {
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingValue(name.to_string()))?;
            out.push_str(value);
        } else {
            out.push('{');
            out.push_str(name);
            out.push('}');
        }
        let consumed = open + 1 + close + 1;
        rest = &rest[consumed..];
        offset += consumed;
    }
    out.push_str(rest);
    Ok(out)
}
