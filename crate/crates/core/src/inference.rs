//! Inference-stage prompt assembly and answer parsing.
//!
//! Classification prompts come in four baseline flavours (zero-shot,
//! few-shot, and their chain-of-thought variants). With insights enabled the
//! retrieved insight block is placed before the baseline prompt. Agent
//! prompts place the block between the initial instructions and the current
//! trajectory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preference::PreferenceRanking;
use crate::task::TaskSpec;
use crate::template::{self, Template, TemplateError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("{shots} exemplar(s) requested but only {available} supplied")]
    MissingExemplars { shots: usize, available: usize },
    #[error("ranking too short: need {needed} candidate(s), have {have}")]
    RankingTooShort { needed: usize, have: usize },
    #[error("invalid inference mode: {0}")]
    InvalidMode(String),
    #[error("exemplar label {label} outside 0..{num_classes}")]
    ExemplarLabel { label: u32, num_classes: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    FewShot,
    ZsCot,
    FsCot,
    Agent,
}

impl PromptKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "zero_shot" | "zero-shot" => PromptKind::ZeroShot,
            "few_shot" | "few-shot" => PromptKind::FewShot,
            "zs_cot" | "zs-cot" => PromptKind::ZsCot,
            "fs_cot" | "fs-cot" => PromptKind::FsCot,
            "agent" => PromptKind::Agent,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::ZeroShot => "zero_shot",
            PromptKind::FewShot => "few_shot",
            PromptKind::ZsCot => "zs_cot",
            PromptKind::FsCot => "fs_cot",
            PromptKind::Agent => "agent",
        }
    }

    pub fn is_cot(&self) -> bool {
        matches!(self, PromptKind::ZsCot | PromptKind::FsCot)
    }

    pub fn takes_shots(&self) -> bool {
        matches!(self, PromptKind::FewShot | PromptKind::FsCot)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Bare expert behavior ("the expert prefers A") in place of insights.
    Raw1,
    /// Bare expert preference ("the expert prefers A rather than B").
    Raw2,
    /// Retrieved training examples labelled by the expert replace the insights.
    PseudoLabelShots,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => Ablation::None,
            "raw1" => Ablation::Raw1,
            "raw2" => Ablation::Raw2,
            "pseudo_label_shots" | "pseudo-label-shots" => Ablation::PseudoLabelShots,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Raw1 => "raw1",
            Ablation::Raw2 => "raw2",
            Ablation::PseudoLabelShots => "pseudo_label_shots",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InferenceMode {
    pub kind: PromptKind,
    pub shots: usize,
    pub with_panda: bool,
    pub ablation: Ablation,
}

impl InferenceMode {
    pub fn new(kind: PromptKind) -> Self {
        Self {
            kind,
            shots: 0,
            with_panda: false,
            ablation: Ablation::None,
        }
    }

    pub fn with_shots(mut self, shots: usize) -> Self {
        self.shots = shots;
        self
    }

    pub fn panda(mut self) -> Self {
        self.with_panda = true;
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Whether a block of retrieved texts (insights or raw contexts) is inserted.
    pub fn uses_insight_block(&self) -> bool {
        match self.ablation {
            Ablation::None => self.with_panda,
            Ablation::Raw1 | Ablation::Raw2 => true,
            Ablation::PseudoLabelShots => false,
        }
    }

    pub fn needs_retrieval(&self) -> bool {
        self.uses_insight_block() || self.ablation == Ablation::PseudoLabelShots
    }

    pub fn validate(&self, expert_predictions_available: bool) -> Result<(), InferenceError> {
        if self.shots > 0 && !self.kind.takes_shots() {
            return Err(InferenceError::InvalidMode(format!(
                "{} prompts take no shots (got {})",
                self.kind.as_str(),
                self.shots
            )));
        }
        if self.ablation == Ablation::PseudoLabelShots {
            if !expert_predictions_available {
                return Err(InferenceError::InvalidMode(
                    "pseudo_label_shots needs expert predictions".into(),
                ));
            }
            if !self.kind.takes_shots() || self.shots == 0 {
                return Err(InferenceError::InvalidMode(
                    "pseudo_label_shots needs a few-shot kind with shots > 0".into(),
                ));
            }
        }
        if matches!(self.ablation, Ablation::Raw1 | Ablation::Raw2) && !expert_predictions_available {
            return Err(InferenceError::InvalidMode(format!(
                "{} needs expert predictions",
                self.ablation.as_str()
            )));
        }
        Ok(())
    }
}

/// A demonstration shown before the query in few-shot prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub text: String,
    pub label: u32,
    /// Worked reasoning for chain-of-thought exemplars. "So, the answer is N."
    /// is appended unless the last line already states the answer.
    pub rationale: Option<String>,
}

/// Task pieces for one classification query.
#[derive(Debug, Clone, Copy)]
pub struct ClassificationPrompt<'a> {
    pub task: &'a TaskSpec,
    pub query: &'a str,
    pub exemplars: &'a [Exemplar],
}

/// A retrieved text to place in the insight block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievedText {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyWarning {
    EmptyInsightsWithPanda,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub inserted_insights: Vec<String>,
    pub mode: InferenceMode,
    pub warning: Option<AssemblyWarning>,
}

pub const INSIGHT_HEADER: &str = "These are some insights that may be helpful for you to improve the success rate:";

const FS_COT_ANSWER_PREFIX: &str = "So, the answer is";

fn join_insights(insights: &[RetrievedText]) -> String {
    insights.iter().map(|i| i.text.as_str()).collect::<Vec<_>>().join("\n\n")
}

fn render_query_block(task: &TaskSpec, query: &str, cot: bool) -> Result<String, InferenceError> {
    let id = if cot {
        template::TWEETEVAL_ZS_COT
    } else {
        template::TWEETEVAL_ZERO_SHOT
    };
    let mapping = task.labels.render_mapping();
    let candidates = task.labels.render_candidates();
    Ok(Template::get(id)?.render(&[
        (template::TASK_NAME, &task.name),
        (template::MAPPING_IN_TASK, &mapping),
        (template::QUERY, query),
        (template::CANDIDATE_ANSWER, &candidates),
    ])?)
}

fn render_exemplar(task: &TaskSpec, ex: &Exemplar, cot: bool) -> Result<String, InferenceError> {
    if ex.label as usize >= task.num_classes() {
        return Err(InferenceError::ExemplarLabel {
            label: ex.label,
            num_classes: task.num_classes(),
        });
    }
    let block = render_query_block(task, &ex.text, cot)?;
    if !cot {
        return Ok(format!("{block} {}", ex.label));
    }
    let mut out = block;
    out.push('\n');
    let rationale = ex.rationale.as_deref().map(str::trim_end).filter(|r| !r.is_empty());
    if let Some(r) = rationale {
        out.push_str(r);
        let last = r.lines().last().unwrap_or("").to_lowercase();
        if last.contains(&format!("the answer is {}", ex.label)) {
            return Ok(out);
        }
        out.push('\n');
    }
    out.push_str(&format!("{FS_COT_ANSWER_PREFIX} {}.", ex.label));
    Ok(out)
}

/// The baseline prompt for `kind`, with no insight block.
pub fn render_baseline_prompt(base: &ClassificationPrompt<'_>, kind: PromptKind, shots: usize) -> Result<String, InferenceError> {
    let cot = kind.is_cot();
    match kind {
        PromptKind::Agent => Err(InferenceError::InvalidMode("agent prompts are not classification prompts".into())),
        PromptKind::ZeroShot | PromptKind::ZsCot => render_query_block(base.task, base.query, cot),
        PromptKind::FewShot | PromptKind::FsCot => {
            if base.exemplars.len() < shots {
                return Err(InferenceError::MissingExemplars {
                    shots,
                    available: base.exemplars.len(),
                });
            }
            let mut blocks = base.exemplars[..shots]
                .iter()
                .map(|ex| render_exemplar(base.task, ex, cot))
                .collect::<Result<Vec<_>, _>>()?;
            blocks.push(render_query_block(base.task, base.query, cot)?);
            Ok(blocks.join("\n\n"))
        }
    }
}

pub fn render_inference_prompt_classification(
    base: &ClassificationPrompt<'_>,
    insights: &[RetrievedText],
    mode: &InferenceMode,
) -> Result<AssembledPrompt, InferenceError> {
    let baseline = render_baseline_prompt(base, mode.kind, mode.shots)?;
    if !mode.uses_insight_block() {
        return Ok(AssembledPrompt {
            text: baseline,
            inserted_insights: Vec::new(),
            mode: *mode,
            warning: None,
        });
    }
    if insights.is_empty() {
        return Ok(AssembledPrompt {
            text: baseline,
            inserted_insights: Vec::new(),
            mode: *mode,
            warning: Some(AssemblyWarning::EmptyInsightsWithPanda),
        });
    }
    let block = join_insights(insights);
    let text = Template::get(template::TWEETEVAL_PANDA_INFERENCE)?.render(&[
        (template::RETRIEVED_INSIGHTS, &block),
        (template::TASK_PROMPT, &baseline),
    ])?;
    Ok(AssembledPrompt {
        text,
        inserted_insights: insights.iter().map(|i| i.id.clone()).collect(),
        mode: *mode,
        warning: None,
    })
}

pub fn render_inference_prompt_agent(
    init_prompt: &str,
    insights: &[RetrievedText],
    trajectory: &str,
) -> Result<AssembledPrompt, InferenceError> {
    let mode = InferenceMode::new(PromptKind::Agent).panda();
    if insights.is_empty() {
        let text = Template::get(template::SCIENCEWORLD_INFERENCE)?.render(&[
            (template::INIT_PROMPT, init_prompt),
            (template::CURRENT_TRAJECTORY, trajectory),
        ])?;
        return Ok(AssembledPrompt {
            text,
            inserted_insights: Vec::new(),
            mode: InferenceMode::new(PromptKind::Agent),
            warning: None,
        });
    }
    let block = join_insights(insights);
    let text = Template::get(template::SCIENCEWORLD_PANDA_INFERENCE)?.render(&[
        (template::INIT_PROMPT, init_prompt),
        (template::RETRIEVED_INSIGHTS, &block),
        (template::CURRENT_TRAJECTORY, trajectory),
    ])?;
    Ok(AssembledPrompt {
        text,
        inserted_insights: insights.iter().map(|i| i.id.clone()).collect(),
        mode,
        warning: None,
    })
}

/// Expert behavior or preference stated without explanation.
pub fn render_ablation_context(ranking: &PreferenceRanking, ablation: Ablation) -> Result<String, InferenceError> {
    let have = ranking.ranked.len();
    match ablation {
        Ablation::Raw1 => {
            let a = ranking.ranked.first().ok_or(InferenceError::RankingTooShort { needed: 1, have })?;
            Ok(format!("the expert prefers {}", a.text))
        }
        Ablation::Raw2 => {
            if have < 2 {
                return Err(InferenceError::RankingTooShort { needed: 2, have });
            }
            Ok(format!(
                "the expert prefers {} rather than {}",
                ranking.ranked[0].text, ranking.ranked[1].text
            ))
        }
        other => Err(InferenceError::InvalidMode(format!(
            "{} has no raw context",
            other.as_str()
        ))),
    }
}

/// Parsed model answer. Unparseable answers are a value, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Label(u32),
    ParseFailure,
}

impl Answer {
    pub const SENTINEL: i64 = -1;

    /// The label, or -1 for a parse failure.
    pub fn prediction(&self) -> i64 {
        match self {
            Answer::Label(l) => *l as i64,
            Answer::ParseFailure => Self::SENTINEL,
        }
    }
}

/// Standalone unsigned integer tokens: digit runs not glued to letters,
/// not negative, and not part of a decimal number.
fn integer_tokens(text: &str) -> impl Iterator<Item = u64> + '_ {
    let bytes = text.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            if !bytes[i].is_ascii_digit() {
                i += 1;
                continue;
            }
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let end = i;
            let before = start.checked_sub(1).map(|p| bytes[p]);
            let after = bytes.get(end).copied();
            let glued_before = before.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.');
            let glued_after = after.is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_');
            let decimal = after == Some(b'.') && bytes.get(end + 1).is_some_and(|b| b.is_ascii_digit());
            // letters outside ASCII (e.g. CJK) also glue
            let glued_unicode = text[..start].chars().next_back().is_some_and(|c| !c.is_ascii() && c.is_alphanumeric())
                || text[end..].chars().next().is_some_and(|c| !c.is_ascii() && c.is_alphanumeric());
            if glued_before || glued_after || decimal || glued_unicode {
                continue;
            }
            if let Ok(v) = text[start..end].parse::<u64>() {
                return Some(v);
            }
        }
        None
    })
}

const ANSWER_CUE: &str = "the answer is";

pub fn parse_classification_answer(response: &str, num_classes: usize, mode: &InferenceMode) -> Answer {
    let in_range = |v: u64| (v as usize) < num_classes;
    let region = if mode.kind.is_cot() {
        let lower = response.to_ascii_lowercase();
        let Some(pos) = lower.rfind(ANSWER_CUE) else {
            return Answer::ParseFailure;
        };
        let rest = &response[pos + ANSWER_CUE.len()..];
        rest.lines().next().unwrap_or("")
    } else {
        response
    };
    integer_tokens(region)
        .find(|&v| in_range(v))
        .map(|v| Answer::Label(v as u32))
        .unwrap_or(Answer::ParseFailure)
}
