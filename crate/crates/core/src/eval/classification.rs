use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{macro_f1, ClassificationReport};
use super::EvalError;
use crate::dataset::LabeledExample;
use crate::gateway::{ChatRequest, Gateway, MAX_TOKENS_CLASSIFICATION};
use crate::inference::{
    parse_classification_answer, render_inference_prompt_classification, Ablation, Answer, AssemblyWarning,
    ClassificationPrompt, Exemplar, InferenceMode, RetrievedText,
};
use crate::learning::{assemble_pool, parallel_map};
use crate::pool::{Insight, InsightPool};
use crate::preference::ExpertOutputRecord;
use crate::retrieval::{top_k_retrieve, EmbeddingProvider, RetrievalConfig};
use crate::task::TaskSpec;

/// The first `shots` examples of a seeded shuffle of the training set.
pub fn select_exemplars(train: &[LabeledExample], shots: usize, seed: u64) -> Result<Vec<Exemplar>, EvalError> {
    if shots > train.len() {
        return Err(EvalError::Config(format!(
            "{shots} shots requested but the training set has {} examples",
            train.len()
        )));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order[..shots]
        .iter()
        .map(|&i| {
            let ex = &train[i];
            let label = u32::try_from(ex.gold).map_err(|_| EvalError::InvalidLabel {
                label: ex.gold,
                num_classes: 0,
            })?;
            Ok(Exemplar {
                text: ex.text.clone(),
                label,
                rationale: None,
            })
        })
        .collect()
}

/// Training queries searchable by similarity, each carrying a label taken
/// from the expert's top prediction (or the gold label when requested).
pub struct ExemplarIndex {
    pool: InsightPool,
    labels: HashMap<String, (String, u32)>,
}

impl ExemplarIndex {
    pub fn build(
        records: &[ExpertOutputRecord],
        task: &TaskSpec,
        embedder: &dyn EmbeddingProvider,
        use_gold: bool,
    ) -> Result<Self, EvalError> {
        let mut labels = HashMap::new();
        let mut insights = Vec::new();
        for r in records {
            let name = if use_gold {
                r.gold.as_deref()
            } else {
                r.top_prediction()
            };
            let Some(name) = name else {
                return Err(EvalError::Config(format!("record {:?} has no label to use", r.id)));
            };
            let value = task
                .labels
                .value_of(name)
                .map_err(|e| EvalError::Config(format!("record {:?}: {e}", r.id)))?;
            labels.insert(r.id.clone(), (r.query.clone(), value));
            insights.push(Insight {
                id: r.id.clone(),
                source_id: r.id.clone(),
                key: r.query.clone(),
                text: r.query.clone(),
                created_by: "expert".into(),
            });
        }
        let pool = assemble_pool(insights, embedder).map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(Self { pool, labels })
    }

    pub fn nearest(&self, query: &str, shots: usize, embedder: &dyn EmbeddingProvider) -> Result<Vec<Exemplar>, String> {
        let hits = top_k_retrieve(&self.pool, query, &RetrievalConfig::new(shots), embedder).map_err(|e| e.to_string())?;
        Ok(hits
            .hits
            .iter()
            .map(|h| {
                let (text, label) = &self.labels[&h.id];
                Exemplar {
                    text: text.clone(),
                    label: *label,
                    rationale: None,
                }
            })
            .collect())
    }
}

pub struct ClassificationSetup<'a> {
    pub task: &'a TaskSpec,
    pub mode: InferenceMode,
    pub retrieval: RetrievalConfig,
    /// Insight pool, or a raw-context pool for the raw1/raw2 ablations.
    pub pool: Option<&'a InsightPool>,
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    /// Source of baseline few-shot exemplars.
    pub train: &'a [LabeledExample],
    /// Required by the pseudo-label ablation.
    pub exemplar_index: Option<&'a ExemplarIndex>,
    pub seed: u64,
    pub workers: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl<'a> ClassificationSetup<'a> {
    pub fn new(task: &'a TaskSpec, mode: InferenceMode) -> Self {
        Self {
            task,
            mode,
            retrieval: RetrievalConfig::new(RetrievalConfig::CLASSIFICATION_DEFAULT_K),
            pool: None,
            embedder: None,
            train: &[],
            exemplar_index: None,
            seed: 0,
            workers: 4,
            max_tokens: MAX_TOKENS_CLASSIFICATION,
            temperature: 0.0,
        }
    }
}

/// Per-example audit record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleRecord {
    pub id: String,
    pub gold: i64,
    pub pred: i64,
    pub parse_failure: bool,
    pub response: Option<String>,
    pub inserted_insights: Vec<String>,
    pub from_cache: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<AssemblyWarning>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationRun {
    pub report: ClassificationReport,
    pub records: Vec<ExampleRecord>,
}

fn check_setup(dataset: &[LabeledExample], setup: &ClassificationSetup<'_>) -> Result<(), EvalError> {
    let expert_available = setup.exemplar_index.is_some() || setup.pool.is_some();
    setup
        .mode
        .validate(expert_available)
        .map_err(|e| EvalError::Config(e.to_string()))?;
    setup.retrieval.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    if setup.mode.uses_insight_block() {
        let pool = setup
            .pool
            .ok_or_else(|| EvalError::Config("insight retrieval needs a pool".into()))?;
        let embedder = setup
            .embedder
            .ok_or_else(|| EvalError::Config("insight retrieval needs an embedder".into()))?;
        if embedder.dim() != pool.embedding_dim {
            return Err(EvalError::Config(format!(
                "embedder dimension {} does not match pool dimension {}",
                embedder.dim(),
                pool.embedding_dim
            )));
        }
    }
    if setup.mode.ablation == Ablation::PseudoLabelShots && (setup.exemplar_index.is_none() || setup.embedder.is_none()) {
        return Err(EvalError::Config("pseudo_label_shots needs expert records and an embedder".into()));
    }
    if dataset.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let k = setup.task.num_classes();
    for ex in dataset.iter().chain(setup.train) {
        if ex.gold < 0 || ex.gold as usize >= k {
            return Err(EvalError::InvalidLabel {
                label: ex.gold,
                num_classes: k,
            });
        }
    }
    Ok(())
}

/// Retrieve, assemble, complete, parse and score every example.
///
/// Per-example failures (retrieval or gateway) are recorded and scored as
/// parse failures; only configuration problems abort the run.
pub fn run_classification_eval(
    dataset: &[LabeledExample],
    setup: &ClassificationSetup<'_>,
    gateway: &Gateway,
) -> Result<ClassificationRun, EvalError> {
    check_setup(dataset, setup)?;
    let shared_exemplars = if setup.mode.kind.takes_shots() && setup.mode.ablation != Ablation::PseudoLabelShots {
        select_exemplars(setup.train, setup.mode.shots, setup.seed)?
    } else {
        Vec::new()
    };
    let num_classes = setup.task.num_classes();

    let records = parallel_map(dataset.len(), setup.workers, |i| {
        let ex = &dataset[i];
        let mut record = ExampleRecord {
            id: ex.id.clone(),
            gold: ex.gold,
            pred: Answer::SENTINEL,
            parse_failure: true,
            response: None,
            inserted_insights: Vec::new(),
            from_cache: false,
            warning: None,
            error: None,
        };
        let result = (|| -> Result<(), String> {
            let mut retrieved = Vec::new();
            if setup.mode.uses_insight_block() {
                let pool = setup.pool.expect("checked");
                let hits = top_k_retrieve(pool, &ex.text, &setup.retrieval, setup.embedder.expect("checked"))
                    .map_err(|e| e.to_string())?;
                retrieved = hits
                    .hits
                    .iter()
                    .map(|h| RetrievedText {
                        id: h.id.clone(),
                        text: pool.get(&h.id).expect("hit id in pool").insight.text.clone(),
                    })
                    .collect();
            }
            let pseudo;
            let exemplars: &[Exemplar] = if setup.mode.ablation == Ablation::PseudoLabelShots {
                let index = setup.exemplar_index.expect("checked");
                pseudo = index.nearest(&ex.text, setup.mode.shots, setup.embedder.expect("checked"))?;
                &pseudo
            } else {
                &shared_exemplars
            };
            let base = ClassificationPrompt {
                task: setup.task,
                query: &ex.text,
                exemplars,
            };
            let mut mode = setup.mode;
            if mode.ablation == Ablation::PseudoLabelShots {
                // a small expert pool may hold fewer neighbours than shots
                mode.shots = mode.shots.min(exemplars.len());
            }
            let prompt = render_inference_prompt_classification(&base, &retrieved, &mode).map_err(|e| e.to_string())?;
            record.inserted_insights = prompt.inserted_insights;
            record.warning = prompt.warning;
            let req = ChatRequest::new(gateway.model(), prompt.text, setup.max_tokens).with_temperature(setup.temperature);
            let resp = gateway.cached_complete(&req).map_err(|e| e.to_string())?;
            let answer = parse_classification_answer(&resp.text, num_classes, &setup.mode);
            record.pred = answer.prediction();
            record.parse_failure = answer == Answer::ParseFailure;
            record.response = Some(resp.text);
            record.from_cache = resp.from_cache;
            Ok(())
        })();
        if let Err(e) = result {
            record.error = Some(e);
        }
        record
    });

    let preds: Vec<i64> = records.iter().map(|r| r.pred).collect();
    let golds: Vec<i64> = records.iter().map(|r| r.gold).collect();
    let report = macro_f1(&preds, &golds, num_classes)?;
    Ok(ClassificationRun { report, records })
}
