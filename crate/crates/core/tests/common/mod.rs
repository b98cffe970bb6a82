#![allow(dead_code)]

use std::path::PathBuf;

use panda::inference::{
    render_ablation_context, render_inference_prompt_agent, render_inference_prompt_classification, Ablation,
    ClassificationPrompt, Exemplar, InferenceMode, PromptKind, RetrievedText,
};
use panda::learning::{postprocess_insight, render_learning_prompt, LearningPromptSpec};
use panda::preference::{parse_expert_records_str, rank_candidates, ExpertOutputRecord};
use panda::task::{LabelMapping, TaskSpec};
use serde::Deserialize;

pub const BLESS_VAR: &str = "PANDA_BLESS";

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture_path(name: &str) -> PathBuf {
    root().join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn sentiment_task() -> TaskSpec {
    TaskSpec::new("sentiment", LabelMapping::from_names(&["negative", "neutral", "positive"]).unwrap())
}

fn record(name: &str) -> ExpertOutputRecord {
    parse_expert_records_str(&fixture(name)).unwrap().remove(0)
}

#[derive(Deserialize)]
struct ExemplarFixture {
    text: String,
    label: u32,
    rationale: String,
}

pub fn paper_exemplars(with_rationale: bool) -> Vec<Exemplar> {
    let raw: Vec<ExemplarFixture> = serde_json::from_str(&fixture("tweet_exemplars.json")).unwrap();
    raw.into_iter()
        .map(|e| Exemplar {
            text: e.text,
            label: e.label,
            rationale: with_rationale.then_some(e.rationale),
        })
        .collect()
}

fn insight(id: &str, response_fixture: &str) -> RetrievedText {
    RetrievedText {
        id: id.into(),
        text: postprocess_insight(&fixture(response_fixture)).unwrap(),
    }
}

fn raw_context(rec: &ExpertOutputRecord, ablation: Ablation) -> RetrievedText {
    let n = if ablation == Ablation::Raw1 { 1 } else { 2 };
    RetrievedText {
        id: format!("raw-{}", rec.id),
        text: render_ablation_context(&rank_candidates(rec, n).unwrap(), ablation).unwrap(),
    }
}

/// Every golden prompt, as (file stem, rendered text).
pub fn golden_cases() -> Vec<(String, String)> {
    let mut out = Vec::new();
    let task = sentiment_task();
    let tweet = record("tweet_expert.jsonl");
    let sw = record("sw_expert.jsonl");
    let query = fixture("tweet_query_prime_day.txt");
    let trajectory = fixture("sw_trajectory.txt");
    let init = fixture("sw_init_prompt.txt");

    let cls_spec = LearningPromptSpec::classification("sentiment", task.labels.clone());
    let agent_spec = LearningPromptSpec::agent("find-animal");
    for n in 1..=3 {
        let r = rank_candidates(&tweet, n).unwrap();
        out.push((format!("learning_classification_n{n}"), render_learning_prompt(&tweet, &r, &cls_spec).unwrap()));
        let r = rank_candidates(&sw, n).unwrap();
        out.push((format!("learning_agent_n{n}"), render_learning_prompt(&sw, &r, &agent_spec).unwrap()));
    }

    let plain = paper_exemplars(false);
    let cot = paper_exemplars(true);
    for kind in [PromptKind::ZeroShot, PromptKind::FewShot, PromptKind::ZsCot, PromptKind::FsCot] {
        let exemplars = if kind == PromptKind::FsCot { &cot } else { &plain };
        let shots = if kind.takes_shots() { 3 } else { 0 };
        let base = ClassificationPrompt {
            task: &task,
            query: &query,
            exemplars,
        };
        let variants: [(&str, InferenceMode, Vec<RetrievedText>); 4] = [
            ("none", InferenceMode::new(kind).with_shots(shots), vec![]),
            (
                "panda",
                InferenceMode::new(kind).with_shots(shots).panda(),
                vec![insight("ins-sentiment-train-0417", "tweet_insight_response.txt")],
            ),
            (
                "raw1",
                InferenceMode::new(kind).with_shots(shots).with_ablation(Ablation::Raw1),
                vec![raw_context(&tweet, Ablation::Raw1)],
            ),
            (
                "raw2",
                InferenceMode::new(kind).with_shots(shots).with_ablation(Ablation::Raw2),
                vec![raw_context(&tweet, Ablation::Raw2)],
            ),
        ];
        for (tag, mode, retrieved) in variants {
            let p = render_inference_prompt_classification(&base, &retrieved, &mode).unwrap();
            out.push((format!("inference_{}_{tag}", kind.as_str().replace('-', "_")), p.text));
        }
    }

    // pseudo-label shots: nearest expert records labelled by the expert's prediction
    let pseudo: Vec<Exemplar> = plain
        .iter()
        .zip([1, 2, 2])
        .map(|(e, label)| Exemplar {
            text: e.text.clone(),
            label,
            rationale: None,
        })
        .collect();
    let base = ClassificationPrompt {
        task: &task,
        query: &query,
        exemplars: &pseudo,
    };
    let mode = InferenceMode::new(PromptKind::FewShot)
        .with_shots(3)
        .with_ablation(Ablation::PseudoLabelShots);
    out.push((
        "inference_few_shot_pseudo_label_shots".into(),
        render_inference_prompt_classification(&base, &[], &mode).unwrap().text,
    ));

    let agent_variants: [(&str, Vec<RetrievedText>); 4] = [
        ("none", vec![]),
        ("panda", vec![insight("ins-sw-4-1-v0-s1", "sw_insight_response.txt")]),
        ("raw1", vec![raw_context(&sw, Ablation::Raw1)]),
        ("raw2", vec![raw_context(&sw, Ablation::Raw2)]),
    ];
    for (tag, retrieved) in agent_variants {
        let p = render_inference_prompt_agent(&init, &retrieved, &trajectory).unwrap();
        out.push((format!("inference_agent_{tag}"), p.text));
    }
    out
}

/// Compares against `tests/golden/<name>.txt`, rewriting it when blessing.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = root().join("tests/golden").join(format!("{name}.txt"));
    if std::env::var_os(BLESS_VAR).is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .map(|i| i + 1)
        .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()) + 1);
    Err(format!("{name}: first difference at line {line}"))
}

pub const PLANTED: &str = "PLANTED-INSIGHT answer ";

/// Learning-stage mock: turns "The expert prefers name(N)" into a planted insight.
pub fn planting_learner() -> panda::gateway::MockProvider {
    panda::gateway::MockProvider::from_fn(|req| {
        let p = &req.prompt;
        let start = p.find("The expert prefers ").expect("classification learning prompt");
        let rest = &p[start..];
        let (open, close) = (rest.find('(').unwrap(), rest.find(')').unwrap());
        Ok(format!("INSIGHT: {PLANTED}{} for texts like this.", &rest[open + 1..close]))
    })
}

/// Inference mock: answers with the first planted label, or a fixed "0".
pub fn planted_reader() -> panda::gateway::MockProvider {
    panda::gateway::MockProvider::from_fn(|req| {
        Ok(match req.prompt.find(PLANTED) {
            Some(i) => req.prompt[i + PLANTED.len()..].chars().take_while(char::is_ascii_digit).collect(),
            None => "0".into(),
        })
    })
}

fn gateway(p: panda::gateway::MockProvider) -> panda::gateway::Gateway {
    panda::gateway::Gateway::new(std::sync::Arc::new(p)).with_retry(panda::gateway::RetryPolicy::no_delay(0))
}

/// Learn a pool from the 30-example fixture, then evaluate zero-shot with
/// and without it. Returns (baseline macro-F1, PANDA macro-F1).
pub fn e2e_classification() -> (f64, f64) {
    use panda::dataset::Dataset;
    use panda::eval::{run_classification_eval, ClassificationSetup};
    use panda::learning::{build_insight_pool, query_key, BuildOptions};
    use panda::retrieval::HashEmbedder;

    let task = sentiment_task();
    let records = parse_expert_records_str(&fixture("sentiment_30_expert.jsonl")).unwrap();
    let data = Dataset::parse(&fixture("sentiment_30.jsonl")).unwrap();
    let embedder = HashEmbedder::new(256);
    let spec = LearningPromptSpec::classification("sentiment", task.labels.clone());
    let (pool, report) =
        build_insight_pool(&records, &spec, &gateway(planting_learner()), &embedder, &query_key, &BuildOptions::default())
            .unwrap();
    assert_eq!(report.written, 30);

    let reader = gateway(planted_reader());
    let baseline = ClassificationSetup::new(&task, InferenceMode::new(PromptKind::ZeroShot));
    let base = run_classification_eval(&data.examples, &baseline, &reader).unwrap();
    let mut with = ClassificationSetup::new(&task, InferenceMode::new(PromptKind::ZeroShot).panda());
    with.pool = Some(&pool);
    with.embedder = Some(&embedder);
    let panda_run = run_classification_eval(&data.examples, &with, &reader).unwrap();
    (base.report.macro_f1, panda_run.report.macro_f1)
}

pub const TOY_VARIATION: &str = "1";

/// An expert record for the toy vault: the first observation, preferring the
/// winning button over a losing one.
pub fn toy_expert_record() -> ExpertOutputRecord {
    use panda::eval::{Environment, ToyEnvironment};
    use panda::preference::CandidateResponse;
    let first = ToyEnvironment::new().reset("vault", TOY_VARIATION).unwrap();
    ExpertOutputRecord {
        id: "vault-1-s0".into(),
        task: "vault".into(),
        query: format!("{}\n>", first.extended_observation()),
        candidates: vec![
            CandidateResponse::new(ToyEnvironment::winning_action(TOY_VARIATION), -0.21).unwrap(),
            CandidateResponse::new("press green button", -1.73).unwrap(),
        ],
        gold: None,
    }
}

/// Learning mock for agent prompts: restates the preferred action.
pub fn action_learner() -> panda::gateway::MockProvider {
    panda::gateway::MockProvider::from_fn(|req| {
        let p = &req.prompt;
        let start = p.find("the expert prefers to ").expect("agent learning prompt") + "the expert prefers to ".len();
        let end = p[start..].find(" rather than").map(|e| start + e).unwrap_or(p.len());
        Ok(format!("INSIGHT: In the vault room the expert chooses to {} because that button is wired to the door.", &p[start..end]))
    })
}

/// Agent mock: follows a retrieved "press blue button" hint, otherwise looks around.
pub fn toy_agent() -> panda::gateway::MockProvider {
    panda::gateway::MockProvider::scripted(
        vec![panda::gateway::MockRule::contains("press blue button", "> press blue button")],
        Some("look around".into()),
    )
}

/// Runs the toy episode with and without a learned pool.
pub fn e2e_episode() -> (panda::eval::EpisodeResult, panda::eval::EpisodeResult) {
    use panda::eval::{run_agent_episode, AgentSetup, ToyEnvironment};
    use panda::learning::{build_insight_pool, observation_key, BuildOptions};
    use panda::retrieval::HashEmbedder;

    let embedder = HashEmbedder::new(256);
    let (pool, _) = build_insight_pool(
        &[toy_expert_record()],
        &LearningPromptSpec::agent("vault"),
        &gateway(action_learner()),
        &embedder,
        &observation_key,
        &BuildOptions::default(),
    )
    .unwrap();
    let agent = gateway(toy_agent());
    let init = fixture("sw_init_prompt.txt");
    let mut setup = AgentSetup::new("vault", TOY_VARIATION, init.clone()).with_pool(&pool, &embedder);
    setup.step_cap = 3;
    let with = run_agent_episode(&mut ToyEnvironment::new(), &setup, &agent).unwrap();
    let mut setup = AgentSetup::new("vault", TOY_VARIATION, init);
    setup.step_cap = 3;
    let without = run_agent_episode(&mut ToyEnvironment::new(), &setup, &agent).unwrap();
    (with, without)
}
