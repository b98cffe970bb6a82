mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clap::Parser;
use common::fixture_path;
use panda::cli::{run, Cli, Services};
use panda::gateway::{ChatProvider, ChatRequest, ChatResponse, MockProvider, ProviderFailure};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn panda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panda"))
        .args(args)
        .env_remove("PANDA_MOCK")
        .env_remove("PANDA_LLM_ENDPOINT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn last_line(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or("").to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn summary(report: &Path) -> Value {
    let text = std::fs::read_to_string(report).unwrap();
    let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    last["summary"].clone()
}

fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join(format!("data{n}.jsonl"));
    let body: String = (0..n)
        .map(|i| format!("{{\"id\":\"x{i}\",\"text\":\"text number {i}\",\"gold\":{}}}\n", i % 4))
        .collect();
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn learn_writes_pool_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let expert = fixture_path("sentiment_30_expert.jsonl");
    let before = digest(&expert);
    let pool = dir.path().join("pool.jsonl");
    let o = panda(&["learn", "--mock", "digest", "--expert", p(&expert), "--pool", p(&pool), "--top-n", "2", "--mode", "classification"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(last_line(&o), "written=30 skipped=0 provider_calls=30");
    let loaded = panda::pool::InsightPool::load(&pool).unwrap();
    assert_eq!(loaded.len(), 30);
    assert_eq!(loaded.embedder_id, "hash-bow-v1/256");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pool.jsonl.report.json")).unwrap()).unwrap();
    assert_eq!(report["written"], 30);
    assert_eq!(report["inputs"]["expert"]["sha256"], before.as_str());
    assert_eq!(digest(&expert), before);
}

#[test]
fn learn_skips_single_candidate_records() {
    let dir = tempfile::tempdir().unwrap();
    let expert = dir.path().join("e.jsonl");
    std::fs::write(
        &expert,
        "{\"id\":\"one\",\"task\":\"t\",\"query\":\"q1\",\"candidates\":[{\"text\":\"open door\",\"score\":0.1}],\"gold\":null}\n\
         {\"id\":\"two\",\"task\":\"t\",\"query\":\"q2\",\"candidates\":[{\"text\":\"open door\",\"score\":0.1},{\"text\":\"wait\",\"score\":-1}],\"gold\":null}\n",
    )
    .unwrap();
    let pool = dir.path().join("pool.jsonl");
    let o = panda(&["learn", "--mock", "digest", "--expert", p(&expert), "--pool", p(&pool), "--mode", "agent"]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(with(&pool, ".report.json")).unwrap()).unwrap();
    assert_eq!(report["written"], 1);
    assert_eq!(report["skipped"][0]["id"], "one");
    assert_eq!(report["skipped"][0]["kind"], "ranking");
    assert!(report["skipped"][0]["reason"].as_str().unwrap().contains("2"));
}

fn with(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

#[test]
fn learn_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.jsonl");
    let missing = dir.path().join("nope.jsonl");
    let o = panda(&["learn", "--mock", "digest", "--expert", p(&missing), "--pool", p(&pool)]);
    assert_eq!(o.status.code(), Some(2));

    let single = dir.path().join("single.jsonl");
    std::fs::write(&single, "{\"id\":\"a\",\"task\":\"t\",\"query\":\"q\",\"candidates\":[{\"text\":\"x\",\"score\":1}],\"gold\":null}\n").unwrap();
    let o = panda(&["learn", "--mock", "digest", "--expert", p(&single), "--pool", p(&pool), "--mode", "agent"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!pool.exists());

    let o = panda(&["learn", "--expert", p(&fixture_path("sentiment_30_expert.jsonl")), "--pool", p(&pool)]);
    assert_eq!(o.status.code(), Some(2), "no LLM configured");
    let o = panda(&["learn", "--mock", "digest", "--expert", p(&fixture_path("sentiment_30_expert.jsonl")), "--pool", p(&pool), "--top-n", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

struct Counting {
    inner: MockProvider,
    calls: Arc<AtomicUsize>,
}

impl ChatProvider for Counting {
    fn model(&self) -> &str {
        self.inner.model()
    }
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

fn run_in_process(args: &[&str], provider: Arc<dyn ChatProvider>) -> (i32, String) {
    let cli = Cli::try_parse_from(std::iter::once("panda").chain(args.iter().copied())).unwrap();
    let services = Services { provider: Some(provider) };
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&cli, &|_| None, &services, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn repeated_learn_with_cache_makes_no_provider_calls() {
    let dir = tempfile::tempdir().unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let provider: Arc<dyn ChatProvider> = Arc::new(Counting {
        inner: MockProvider::digest(),
        calls: calls.clone(),
    });
    let cache = dir.path().join("cache.jsonl");
    let expert = fixture_path("sentiment_30_expert.jsonl");
    let pool_a = dir.path().join("a.jsonl");
    let pool_b = dir.path().join("b.jsonl");
    let args = |pool: &Path| -> Vec<String> {
        ["learn", "--cache", p(&cache), "--expert", p(&expert), "--pool", p(pool)].map(String::from).to_vec()
    };
    let a = args(&pool_a);
    let (code, _) = run_in_process(&a.iter().map(String::as_str).collect::<Vec<_>>(), provider.clone());
    assert_eq!(code, 0);
    assert_eq!(calls.load(Ordering::SeqCst), 30);
    let b = args(&pool_b);
    let (code, out) = run_in_process(&b.iter().map(String::as_str).collect::<Vec<_>>(), provider);
    assert_eq!(code, 0);
    assert_eq!(calls.load(Ordering::SeqCst), 30);
    assert!(out.contains("provider_calls=0"));
    assert_eq!(std::fs::read(&pool_a).unwrap(), std::fs::read(&pool_b).unwrap());
}

#[test]
fn eval_is_deterministic_and_prints_macro_f1() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture_path("sentiment_30.jsonl");
    let r1 = dir.path().join("r1.jsonl");
    let r2 = dir.path().join("r2.jsonl");
    for r in [&r1, &r2] {
        let o = panda(&[
            "eval", "--mock", "echo-label:1", "--data", p(&data), "--task-name", "sentiment",
            "--labels", "negative,neutral,positive", "--report", p(r),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let expected = 2.0 * 10.0 / (10.0 + 30.0) / 3.0;
        let line = last_line(&o);
        let value: f64 = line.strip_prefix("macro_f1=").unwrap().parse().unwrap();
        assert!((value - expected).abs() < 1e-12);
    }
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    let s = summary(&r1);
    assert_eq!(s["n_examples"], 30);
    assert_eq!(s["ablation"], "none");
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(std::fs::read_to_string(&r1).unwrap().lines().count(), 31);
}

#[test]
fn eval_with_panda_needs_pool() {
    let dir = tempfile::tempdir().unwrap();
    let o = panda(&[
        "eval", "--mock", "echo-label:1", "--data", p(&fixture_path("sentiment_30.jsonl")), "--task-name", "sentiment",
        "--labels", "negative,neutral,positive", "--with-panda", "--report", p(&dir.path().join("r.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_raw2_ablation_is_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.jsonl");
    let script = dir.path().join("script.jsonl");
    std::fs::write(&script, "{\"contains\":\"the expert prefers\",\"reply\":\"2\"}\n{\"default\":\"1\"}\n").unwrap();
    let o = panda(&[
        "eval", "--mock", &format!("script:{}", p(&script)), "--data", p(&fixture_path("sentiment_30.jsonl")),
        "--task-name", "sentiment", "--labels", "negative,neutral,positive", "--ablation", "raw2",
        "--expert", p(&fixture_path("sentiment_30_expert.jsonl")), "--report", p(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&report);
    assert_eq!(s["ablation"], "raw2");
    let first: Value = serde_json::from_str(std::fs::read_to_string(&report).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["pred"], 2);
    assert_eq!(first["inserted_insights"].as_array().unwrap().len(), 6);

    let o = panda(&[
        "eval", "--mock", "echo-label:1", "--data", p(&fixture_path("sentiment_30.jsonl")), "--task-name", "sentiment",
        "--labels", "negative,neutral,positive", "--ablation", "raw2", "--report", p(&report),
    ]);
    assert_eq!(o.status.code(), Some(2), "raw ablation without expert records");
}

#[test]
fn eval_end_to_end_through_learned_pool() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.jsonl");
    let expert = fixture_path("sentiment_30_expert.jsonl");
    let (code, _) = run_in_process(
        &["learn", "--expert", p(&expert), "--pool", p(&pool)],
        Arc::new(common::planting_learner()),
    );
    assert_eq!(code, 0);
    let report = dir.path().join("r.jsonl");
    let data = fixture_path("sentiment_30.jsonl");
    let base = [
        "eval", "--data", p(&data), "--task-name", "sentiment",
        "--labels", "negative,neutral,positive", "--report", p(&report),
    ];
    let (code, out) = run_in_process(&base, Arc::new(common::planted_reader()));
    assert_eq!(code, 0);
    let baseline: f64 = out.trim().strip_prefix("macro_f1=").unwrap().parse().unwrap();
    assert!(baseline < 0.5);
    let mut with = base.to_vec();
    with.extend(["--with-panda", "--pool", p(&pool)]);
    let (code, out) = run_in_process(&with, Arc::new(common::planted_reader()));
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "macro_f1=1.0");
    assert_eq!(summary(&report)["with_panda"], true);

    let mut mismatched = with.clone();
    mismatched.extend(["--set", "embed_dim=64"]);
    let (code, _) = run_in_process(&mismatched, Arc::new(common::planted_reader()));
    assert_eq!(code, 2, "pool embedded at another dimension");
}

#[test]
fn flip_manifest_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 1000);
    let out = dir.path().join("flipped.jsonl");
    let o = panda(&["flip", "--data", p(&data), "--out", p(&out), "--ta", "0.25", "--seed", "7", "--num-classes", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(with(&out, ".manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["flip_count"], 750);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["ta"], 0.25);
    let first = std::fs::read(&out).unwrap();
    let o = panda(&["flip", "--data", p(&data), "--out", p(&out), "--ta", "0.25", "--seed", "7", "--num-classes", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn flip_identity_and_bad_ta() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture_path("sentiment_30.jsonl");
    let out = dir.path().join("same.jsonl");
    let o = panda(&["flip", "--data", p(&data), "--out", p(&out), "--ta", "1.0", "--num-classes", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&data).unwrap());
    for ta in ["0", "1.5", "-0.2"] {
        let o = panda(&["flip", "--data", p(&data), "--out", p(&out), "--ta", ta, "--num-classes", "3"]);
        assert_eq!(o.status.code(), Some(2), "ta {ta}");
    }
}

#[test]
fn commands_never_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 20);
    let before = digest(&data);
    let o = panda(&["flip", "--data", p(&data), "--out", p(&data), "--ta", "0.5", "--num-classes", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(digest(&data), before);
}

fn learn_toy_pool(dir: &Path) -> PathBuf {
    let expert = dir.join("toy_expert.jsonl");
    std::fs::write(&expert, serde_json::to_string(&common::toy_expert_record()).unwrap() + "\n").unwrap();
    let pool = dir.join("toy_pool.jsonl");
    let (code, _) = run_in_process(
        &["learn", "--mode", "agent", "--expert", p(&expert), "--pool", p(&pool)],
        Arc::new(common::action_learner()),
    );
    assert_eq!(code, 0);
    pool
}

#[test]
fn episode_with_and_without_pool() {
    let dir = tempfile::tempdir().unwrap();
    let pool = learn_toy_pool(dir.path());
    let report = dir.path().join("ep.jsonl");
    let args = ["episode", "--variations", common::TOY_VARIATION, "--step-cap", "3", "--rounds", "2"];
    let (code, out) = run_in_process(&args, Arc::new(common::toy_agent()));
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "mean_score=0.0");
    let mut with = args.to_vec();
    with.extend(["--pool", p(&pool), "--report", p(&report)]);
    let (code, out) = run_in_process(&with, Arc::new(common::toy_agent()));
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "mean_score=100.0");
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 3);
    let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["summary"]["per_task"][0]["mean"], 100.0);
}

#[test]
fn episode_over_child_process_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let pool = learn_toy_pool(dir.path());
    let env_cmd = format!("{} serve-toy-env", env!("CARGO_BIN_EXE_panda"));
    let (code, out) = run_in_process(
        &["episode", "--env-cmd", &env_cmd, "--variations", common::TOY_VARIATION, "--step-cap", "3", "--pool", p(&pool)],
        Arc::new(common::toy_agent()),
    );
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "mean_score=100.0");
}

#[test]
fn missing_config_file_is_config_error() {
    let o = panda(&["flip", "--config", "/nonexistent/panda.conf", "--data", "x", "--out", "y", "--ta", "0.5", "--num-classes", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_env_layers() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 100);
    let conf = dir.path().join("panda.conf");
    std::fs::write(&conf, "# flip settings\nseed = 3\n").unwrap();
    let run_flip = |out: &Path, extra_env: Option<(&str, &str)>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_panda"));
        cmd.args(["flip", "--config", p(&conf), "--data", p(&data), "--out", p(out), "--ta", "0.5", "--num-classes", "4"]);
        if let Some((k, v)) = extra_env {
            cmd.env(k, v);
        }
        assert!(cmd.output().unwrap().status.success());
        let m: Value = serde_json::from_str(&std::fs::read_to_string(with(out, ".manifest.json")).unwrap()).unwrap();
        m["seed"].as_u64().unwrap()
    };
    assert_eq!(run_flip(&dir.path().join("a.jsonl"), None), 3);
    assert_eq!(run_flip(&dir.path().join("b.jsonl"), Some(("PANDA_SEED", "4"))), 4);
}
