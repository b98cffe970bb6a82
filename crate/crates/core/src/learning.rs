//! Learning stage: ask the LLM to explain each expert preference and collect
//! the explanations into an insight pool.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, MAX_TOKENS_INSIGHT};
use crate::inference::{render_ablation_context, Ablation};
use crate::pool::{Insight, InsightPool, PoolError};
use crate::preference::{rank_candidates, ExpertOutputRecord, PreferenceRanking};
use crate::retrieval::{embed_texts, EmbeddingProvider, RetrievalError};
use crate::task::{LabelMapping, TaskError};
use crate::template::{self, Template, TemplateError};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("classification learning prompts need a label mapping")]
    MissingLabelMapping,
    #[error("ranking too short: need {needed} candidate(s), have {have}")]
    RankingTooShort { needed: usize, have: usize },
    #[error("template {template:?} cannot render a {mode:?} prompt")]
    TemplateModeMismatch { template: String, mode: LearningMode },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Label(#[from] TaskError),
    #[error("insight is empty after post-processing")]
    EmptyInsight,
    #[error("embedding failed: {0}")]
    Embedding(#[from] RetrievalError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("{0}")]
    Ablation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    Classification,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearningPromptSpec {
    pub mode: LearningMode,
    pub task_name: String,
    pub label_mapping: Option<LabelMapping>,
    pub template_id: String,
}

impl LearningPromptSpec {
    pub fn classification(task_name: impl Into<String>, labels: LabelMapping) -> Self {
        Self {
            mode: LearningMode::Classification,
            task_name: task_name.into(),
            label_mapping: Some(labels),
            template_id: template::TWEETEVAL_LEARNING.to_string(),
        }
    }

    pub fn agent(task_name: impl Into<String>) -> Self {
        Self {
            mode: LearningMode::Agent,
            task_name: task_name.into(),
            label_mapping: None,
            template_id: template::SCIENCEWORLD_LEARNING.to_string(),
        }
    }

    pub fn validate(&self) -> Result<Template, LearningError> {
        if self.mode == LearningMode::Classification && self.label_mapping.is_none() {
            return Err(LearningError::MissingLabelMapping);
        }
        let t = Template::get(&self.template_id)?;
        let needs = match self.mode {
            LearningMode::Classification => template::QUERY,
            LearningMode::Agent => template::CURRENT_TRAJECTORY,
        };
        if !t.text().contains(&format!("{{{needs}}}")) {
            return Err(LearningError::TemplateModeMismatch {
                template: self.template_id.clone(),
                mode: self.mode,
            });
        }
        Ok(t)
    }
}

/// `A rather than B, and B rather than C` — one link per adjacent pair.
fn preference_chain(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [only] => only.clone(),
        _ => items
            .windows(2)
            .map(|w| format!("{} rather than {}", w[0], w[1]))
            .collect::<Vec<_>>()
            .join(", and "),
    }
}

pub fn render_learning_prompt_classification(
    record: &ExpertOutputRecord,
    ranking: &PreferenceRanking,
    spec: &LearningPromptSpec,
) -> Result<String, LearningError> {
    let template = spec.validate()?;
    let labels = spec.label_mapping.as_ref().ok_or(LearningError::MissingLabelMapping)?;
    if ranking.ranked.is_empty() {
        return Err(LearningError::RankingTooShort { needed: 1, have: 0 });
    }
    let rendered = ranking
        .ranked
        .iter()
        .map(|c| labels.render_label(&c.text))
        .collect::<Result<Vec<_>, _>>()?;
    let preference = format!("The expert prefers {}.", preference_chain(&rendered));
    let mapping = labels.render_mapping();
    let candidates = labels.render_candidates();
    Ok(template.render(&[
        (template::TASK_NAME, &spec.task_name),
        (template::MAPPING_IN_TASK, &mapping),
        (template::QUERY, &record.query),
        (template::CANDIDATE_ANSWER, &candidates),
        (template::EXPERT_PREFERENCE, &preference),
    ])?)
}

pub fn render_learning_prompt_agent(trajectory: &str, ranking: &PreferenceRanking) -> Result<String, LearningError> {
    if ranking.ranked.is_empty() {
        return Err(LearningError::RankingTooShort { needed: 1, have: 0 });
    }
    let actions: Vec<String> = ranking.ranked.iter().map(|c| format!("to {}", c.text)).collect();
    let preference = format!("the expert prefers {}.", preference_chain(&actions));
    Ok(Template::get(template::SCIENCEWORLD_LEARNING)?.render(&[
        (template::CURRENT_TRAJECTORY, trajectory),
        (template::EXPERT_PREFERENCE, &preference),
    ])?)
}

pub fn render_learning_prompt(
    record: &ExpertOutputRecord,
    ranking: &PreferenceRanking,
    spec: &LearningPromptSpec,
) -> Result<String, LearningError> {
    match spec.mode {
        LearningMode::Classification => render_learning_prompt_classification(record, ranking, spec),
        LearningMode::Agent => {
            spec.validate()?;
            render_learning_prompt_agent(&record.query, ranking)
        }
    }
}

/// Strips one leading `INSIGHT:` marker, normalizes CRLF and trims.
pub fn postprocess_insight(raw: &str) -> Result<String, LearningError> {
    let normalized = raw.replace("\r\n", "\n");
    let trimmed = normalized.trim_start();
    let body = trimmed.strip_prefix("INSIGHT:").unwrap_or(trimmed).trim();
    if body.is_empty() {
        return Err(LearningError::EmptyInsight);
    }
    Ok(body.to_string())
}

/// The text after the last `> action` line of a trajectory, ignoring a
/// trailing empty prompt marker. The whole text when no action was taken.
pub fn latest_observation(trajectory: &str) -> String {
    let mut lines: Vec<&str> = trajectory.lines().collect();
    while let Some(last) = lines.last() {
        let t = last.trim();
        if t.is_empty() || t == ">" {
            lines.pop();
        } else {
            break;
        }
    }
    let start = lines
        .iter()
        .rposition(|l| l.starts_with('>'))
        .map(|i| i + 1)
        .unwrap_or(0);
    lines[start..].join("\n").trim().to_string()
}

pub type KeyFn = dyn Fn(&ExpertOutputRecord) -> String + Sync;

pub fn query_key(record: &ExpertOutputRecord) -> String {
    record.query.clone()
}

pub fn observation_key(record: &ExpertOutputRecord) -> String {
    latest_observation(&record.query)
}

/// Default retrieval key per mode: the query text, or the latest observation.
pub fn default_key_fn(mode: LearningMode) -> &'static KeyFn {
    match mode {
        LearningMode::Classification => &query_key,
        LearningMode::Agent => &observation_key,
    }
}

pub fn insight_id(record_id: &str) -> String {
    format!("ins-{record_id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipKind {
    Ranking,
    Prompt,
    GenerationFailed,
    EmptyInsight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub id: String,
    pub kind: SkipKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub requested: usize,
    pub written: usize,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub top_n: usize,
    pub workers: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            top_n: 2,
            workers: 4,
            max_tokens: MAX_TOKENS_INSIGHT,
            temperature: 0.0,
        }
    }
}

/// Runs `work` over `0..len` on up to `workers` threads; results keep index order.
pub(crate) fn parallel_map<T, F>(len: usize, workers: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(len.max(1));
    let next = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, T)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= len {
                            break local;
                        }
                        local.push((i, work(i)));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, t)| t).collect()
}

/// Generates one insight per record and embeds its retrieval key.
///
/// Records that cannot be ranked, prompted, or answered are listed in the
/// report and left out of the pool. Embedding failures abort the build.
pub fn build_insight_pool(
    records: &[ExpertOutputRecord],
    spec: &LearningPromptSpec,
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
    key_fn: &KeyFn,
    opts: &BuildOptions,
) -> Result<(InsightPool, BuildReport), LearningError> {
    spec.validate()?;
    let outcomes = parallel_map(records.len(), opts.workers, |i| {
        let record = &records[i];
        let skip = |kind, reason: String| SkippedRecord {
            id: record.id.clone(),
            kind,
            reason,
        };
        let ranking = rank_candidates(record, opts.top_n).map_err(|e| skip(SkipKind::Ranking, e.to_string()))?;
        let prompt =
            render_learning_prompt(record, &ranking, spec).map_err(|e| skip(SkipKind::Prompt, e.to_string()))?;
        let req = ChatRequest::new(gateway.model(), prompt, opts.max_tokens).with_temperature(opts.temperature);
        let resp = gateway
            .cached_complete(&req)
            .map_err(|e| skip(SkipKind::GenerationFailed, e.to_string()))?;
        let text = postprocess_insight(&resp.text).map_err(|e| skip(SkipKind::EmptyInsight, e.to_string()))?;
        Ok(Insight {
            id: insight_id(&record.id),
            source_id: record.id.clone(),
            key: key_fn(record),
            text,
            created_by: resp.model,
        })
    });

    let mut report = BuildReport {
        requested: records.len(),
        ..Default::default()
    };
    let mut insights = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(insight) => insights.push(insight),
            Err(skipped) => report.skipped.push(skipped),
        }
    }
    let pool = assemble_pool(insights, embedder)?;
    report.written = pool.len();
    Ok((pool, report))
}

/// A pool of raw expert contexts (no explanation), for the raw1/raw2
/// ablations. Records whose ranking is too short are reported and skipped.
pub fn build_raw_pool(
    records: &[ExpertOutputRecord],
    ablation: Ablation,
    embedder: &dyn EmbeddingProvider,
    key_fn: &KeyFn,
) -> Result<(InsightPool, BuildReport), LearningError> {
    let n = match ablation {
        Ablation::Raw1 => 1,
        Ablation::Raw2 => 2,
        other => return Err(LearningError::Ablation(format!("{} has no raw pool", other.as_str()))),
    };
    let mut report = BuildReport {
        requested: records.len(),
        ..Default::default()
    };
    let mut insights = Vec::new();
    for record in records {
        let context = rank_candidates(record, n)
            .map_err(|e| e.to_string())
            .and_then(|r| render_ablation_context(&r, ablation).map_err(|e| e.to_string()));
        match context {
            Ok(text) => insights.push(Insight {
                id: format!("raw-{}", record.id),
                source_id: record.id.clone(),
                key: key_fn(record),
                text,
                created_by: format!("expert/{}", ablation.as_str()),
            }),
            Err(reason) => report.skipped.push(SkippedRecord {
                id: record.id.clone(),
                kind: SkipKind::Ranking,
                reason,
            }),
        }
    }
    let pool = assemble_pool(insights, embedder)?;
    report.written = pool.len();
    Ok((pool, report))
}

/// Embeds each insight's key and collects them into a pool.
pub fn assemble_pool(insights: Vec<Insight>, embedder: &dyn EmbeddingProvider) -> Result<InsightPool, LearningError> {
    let keys: Vec<&str> = insights.iter().map(|i| i.key.as_str()).collect();
    let vectors = if keys.is_empty() {
        Vec::new()
    } else {
        embed_texts(&keys, embedder)?
    };
    let mut pool = InsightPool::new(embedder.id(), embedder.dim())?;
    for (insight, vector) in insights.into_iter().zip(vectors) {
        pool.push(insight, vector)?;
    }
    Ok(pool)
}
