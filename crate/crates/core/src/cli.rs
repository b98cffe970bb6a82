//! The `panda` command line: learn, eval, flip, episode.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::Dataset;
use crate::eval::{
    aggregate_episodes, flip_labels, run_agent_episode, run_classification_eval, AgentSetup, ClassificationSetup,
    Environment, ExemplarIndex, FlipSpec, ProcessTransport, ProtocolEnvironment, ToyEnvironment,
};
use crate::gateway::{ChatProvider, Gateway};
use crate::inference::{Ablation, InferenceMode, PromptKind};
use crate::learning::{build_insight_pool, build_raw_pool, default_key_fn, BuildOptions, LearningMode, LearningPromptSpec};
use crate::pool::InsightPool;
use crate::preference::{parse_expert_records, ExpertOutputRecord};
use crate::retrieval::{EmbeddingProvider, RetrievalConfig};
use crate::task::{LabelMapping, TaskSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;

pub const DEFAULT_INIT_PROMPT: &str =
    "You are an agent in a text-based environment. Reply with exactly one action for the next step.";

#[derive(Debug, Parser)]
#[command(name = "panda", version, about = "Learn insights from expert preferences and retrieve them at inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use a mock LLM: `echo-label:<text>`, `digest`, or `script:<path>`.
    #[arg(long, global = true)]
    pub mock: Option<String>,
    /// Response cache file (append-only JSONL).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override any config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an insight pool from expert outputs.
    Learn(LearnArgs),
    /// Evaluate a classification dataset.
    Eval(EvalArgs),
    /// Corrupt dataset labels to a target training accuracy.
    Flip(FlipArgs),
    /// Run agent episodes in a text environment.
    Episode(EpisodeArgs),
    /// Serve the built-in toy environment over stdin/stdout.
    ServeToyEnv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Classification,
    Agent,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub expert: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long, value_enum, default_value = "classification")]
    pub mode: ModeArg,
    /// Defaults to the records' task field.
    #[arg(long)]
    pub task_name: Option<String>,
    /// Comma-separated class names in value order; defaults to the first
    /// record's candidate order.
    #[arg(long)]
    pub labels: Option<String>,
    /// Build report; defaults to `<pool>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub task_name: String,
    /// Comma-separated class names in value order.
    #[arg(long)]
    pub labels: String,
    /// zero-shot, few-shot, zs-cot or fs-cot.
    #[arg(long, default_value = "zero-shot")]
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    /// Source of baseline few-shot exemplars.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub with_panda: bool,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// none, raw1, raw2 or pseudo_label_shots.
    #[arg(long, default_value = "none")]
    pub ablation: String,
    /// Expert records for the raw and pseudo-label ablations.
    #[arg(long)]
    pub expert: Option<PathBuf>,
    /// Label pseudo-label shots with gold labels instead of expert predictions.
    #[arg(long)]
    pub pseudo_gold: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlipArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ta: f64,
    #[arg(long)]
    pub num_classes: usize,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    /// Environment command speaking the JSON line protocol; the built-in toy
    /// environment when absent.
    #[arg(long)]
    pub env_cmd: Option<String>,
    #[arg(long, default_value = "vault")]
    pub task: String,
    /// Comma-separated variation ids.
    #[arg(long, default_value = "0")]
    pub variations: String,
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    #[arg(long, default_value_t = 30)]
    pub step_cap: usize,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub init_prompt: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Retrieve once at the first step only.
    #[arg(long)]
    pub no_refresh: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Empty(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Empty(_) => EXIT_EMPTY,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Empty(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Externally supplied services; anything left `None` comes from config.
#[derive(Default)]
pub struct Services {
    pub provider: Option<Arc<dyn ChatProvider>>,
}

struct Context {
    config: PipelineConfig,
    gateway: Gateway,
    embedder: Box<dyn EmbeddingProvider>,
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn resolve_config(cli: &Cli, env: &dyn Fn(&str) -> Option<String>, extra: &[(&str, String)]) -> Result<PipelineConfig, CliError> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(m) = &cli.mock {
        overrides.push(("mock".into(), m.clone()));
    }
    if let Some(c) = &cli.cache {
        overrides.push(("cache".into(), c.display().to_string()));
    }
    if let Some(w) = cli.workers {
        overrides.push(("workers".into(), w.to_string()));
    }
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    for (k, v) in extra {
        overrides.push((k.to_string(), v.clone()));
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let borrowed: Vec<(&str, String)> = overrides.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    if let Some(path) = &cli.config {
        if !path.exists() {
            return Err(CliError::Config(format!("config file {} not found", path.display())));
        }
    }
    Ok(PipelineConfig::resolve(cli.config.as_deref(), env, &borrowed)?)
}

fn context(config: PipelineConfig, services: &Services) -> Result<Context, CliError> {
    let provider = match &services.provider {
        Some(p) => p.clone(),
        None => config.chat_provider()?,
    };
    let gateway = config.gateway(provider).map_err(config_error)?;
    let embedder = config.embedding_provider();
    Ok(Context {
        config,
        gateway,
        embedder,
    })
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Writes an output, refusing to overwrite any input.
fn write_output(path: &Path, inputs: &[&Path], contents: &[u8]) -> Result<(), CliError> {
    if inputs.iter().any(|i| same_file(path, i)) {
        return Err(CliError::Config(format!("refusing to overwrite input file {}", path.display())));
    }
    std::fs::write(path, contents).map_err(|e| runtime_error(format!("cannot write {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_records(path: &Path) -> Result<Vec<ExpertOutputRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    parse_expert_records(BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path, num_classes: usize) -> Result<Dataset, CliError> {
    let ds = Dataset::parse(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ds.check_labels(num_classes).map_err(config_error)?;
    Ok(ds)
}

fn load_pool(path: &Path, embedder: &dyn EmbeddingProvider) -> Result<InsightPool, CliError> {
    let pool = InsightPool::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if pool.embedder_id != embedder.id() || pool.embedding_dim != embedder.dim() {
        return Err(CliError::Config(format!(
            "pool {} was embedded with {} (dim {}), but the configured embedder is {} (dim {})",
            path.display(),
            pool.embedder_id,
            pool.embedding_dim,
            embedder.id(),
            embedder.dim()
        )));
    }
    Ok(pool)
}

fn label_mapping(list: &str) -> Result<LabelMapping, CliError> {
    let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    LabelMapping::from_names(&names).map_err(config_error)
}

fn jsonl_line(out: &mut Vec<u8>, v: &impl serde::Serialize) {
    serde_json::to_writer(&mut *out, v).expect("value serializes");
    out.push(b'\n');
}

fn cmd_learn(cli: &Cli, args: &LearnArgs, env: &dyn Fn(&str) -> Option<String>, services: &Services, out: &mut dyn Write) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(n) = args.top_n {
        extra.push(("top_n", n.to_string()));
    }
    let config = resolve_config(cli, env, &extra)?;
    if config.top_n == 0 {
        return Err(CliError::Config("--top-n must be at least 1".into()));
    }
    let records = load_records(&args.expert)?;
    let expert_digest = file_digest(&args.expert)?;
    let ctx = context(config, services)?;

    let first = records.first();
    let task_name = args
        .task_name
        .clone()
        .or_else(|| first.map(|r| r.task.clone()))
        .unwrap_or_default();
    let (spec, mode) = match args.mode {
        ModeArg::Classification => {
            let labels = match (&args.labels, first) {
                (Some(list), _) => label_mapping(list)?,
                (None, Some(r)) => {
                    let names: Vec<&str> = r.candidates.iter().map(|c| c.text.as_str()).collect();
                    LabelMapping::from_names(&names).map_err(config_error)?
                }
                (None, None) => return Err(CliError::Empty("no expert records".into())),
            };
            (LearningPromptSpec::classification(task_name, labels), LearningMode::Classification)
        }
        ModeArg::Agent => (LearningPromptSpec::agent(task_name), LearningMode::Agent),
    };
    spec.validate().map_err(config_error)?;
    let opts = BuildOptions {
        top_n: ctx.config.top_n,
        workers: ctx.config.workers,
        temperature: ctx.config.temperature,
        ..BuildOptions::default()
    };
    let (pool, report) = build_insight_pool(&records, &spec, &ctx.gateway, ctx.embedder.as_ref(), default_key_fn(mode), &opts)
        .map_err(runtime_error)?;

    let pool_text = pool.to_jsonl();
    let report_path = args.report.clone().unwrap_or_else(|| with_suffix(&args.pool, ".report.json"));
    if !pool.is_empty() {
        write_output(&args.pool, &[&args.expert], pool_text.as_bytes())?;
    }
    let manifest = json!({
        "command": "learn",
        "config_hash": ctx.config.config_hash(),
        "seed": ctx.config.seed,
        "mode": format!("{:?}", mode).to_lowercase(),
        "top_n": opts.top_n,
        "inputs": { "expert": { "path": args.expert.display().to_string(), "sha256": expert_digest } },
        "pool": { "path": args.pool.display().to_string(), "sha256": hex::encode(Sha256::digest(pool_text.as_bytes())) },
        "embedder_id": ctx.embedder.id(),
        "requested": report.requested,
        "written": report.written,
        "skipped": report.skipped,
        "provider_calls": ctx.gateway.provider_calls(),
    });
    write_output(&report_path, &[&args.expert], format!("{manifest:#}\n").as_bytes())?;
    writeln!(
        out,
        "written={} skipped={} provider_calls={}",
        report.written,
        report.skipped.len(),
        ctx.gateway.provider_calls()
    )
    .map_err(runtime_error)?;
    if pool.is_empty() {
        return Err(CliError::Empty(format!(
            "no insights written ({} of {} records skipped)",
            report.skipped.len(),
            report.requested
        )));
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, env: &dyn Fn(&str) -> Option<String>, services: &Services, out: &mut dyn Write) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(k) = args.k {
        extra.push(("k", k.to_string()));
    }
    let config = resolve_config(cli, env, &extra)?;
    let kind = PromptKind::parse(&args.kind)
        .filter(|k| *k != PromptKind::Agent)
        .ok_or_else(|| CliError::Config(format!("unknown prompt kind {:?}", args.kind)))?;
    let ablation = Ablation::parse(&args.ablation).ok_or_else(|| CliError::Config(format!("unknown ablation {:?}", args.ablation)))?;
    let mut mode = InferenceMode::new(kind).with_shots(args.shots).with_ablation(ablation);
    if args.with_panda {
        mode = mode.panda();
    }
    if args.with_panda && args.pool.is_none() {
        return Err(CliError::Config("--with-panda needs --pool".into()));
    }
    if matches!(ablation, Ablation::Raw1 | Ablation::Raw2 | Ablation::PseudoLabelShots) && args.expert.is_none() {
        return Err(CliError::Config(format!("--ablation {} needs --expert", ablation.as_str())));
    }
    mode.validate(args.expert.is_some()).map_err(config_error)?;
    let task = TaskSpec::new(args.task_name.clone(), label_mapping(&args.labels)?);
    let dataset = load_dataset(&args.data, task.num_classes())?;
    let train = match &args.train {
        Some(p) => load_dataset(p, task.num_classes())?.examples,
        None if kind.takes_shots() && ablation != Ablation::PseudoLabelShots && args.shots > 0 => {
            return Err(CliError::Config("few-shot prompts need --train".into()))
        }
        None => Vec::new(),
    };
    let ctx = context(config, services)?;
    let embedder = ctx.embedder.as_ref();

    let mut inputs = vec![json!({ "data": args.data.display().to_string(), "sha256": file_digest(&args.data)? })];
    for (name, path) in [("train", &args.train), ("pool", &args.pool), ("expert", &args.expert)] {
        if let Some(p) = path {
            inputs.push(json!({ name: p.display().to_string(), "sha256": file_digest(p)? }));
        }
    }

    let records = args.expert.as_deref().map(load_records).transpose()?;
    let pool = match ablation {
        Ablation::Raw1 | Ablation::Raw2 => {
            let (pool, _) = build_raw_pool(records.as_deref().unwrap_or_default(), ablation, embedder, default_key_fn(LearningMode::Classification))
                .map_err(runtime_error)?;
            Some(pool)
        }
        _ if args.with_panda => Some(load_pool(args.pool.as_deref().expect("checked"), embedder)?),
        _ => None,
    };
    let index = match ablation {
        Ablation::PseudoLabelShots => Some(
            ExemplarIndex::build(records.as_deref().unwrap_or_default(), &task, embedder, args.pseudo_gold).map_err(config_error)?,
        ),
        _ => None,
    };

    let mut setup = ClassificationSetup::new(&task, mode);
    setup.retrieval = RetrievalConfig::new(ctx.config.k.unwrap_or(RetrievalConfig::CLASSIFICATION_DEFAULT_K));
    setup.pool = pool.as_ref();
    setup.embedder = Some(embedder);
    setup.train = &train;
    setup.exemplar_index = index.as_ref();
    setup.seed = ctx.config.seed;
    setup.workers = ctx.config.workers;
    setup.temperature = ctx.config.temperature;
    let run = run_classification_eval(&dataset.examples, &setup, &ctx.gateway).map_err(|e| match e {
        crate::eval::EvalError::Config(m) => CliError::Config(m),
        other => runtime_error(other),
    })?;

    let mut report = Vec::new();
    for r in &run.records {
        jsonl_line(&mut report, r);
    }
    let summary = json!({
        "summary": {
            "macro_f1": run.report.macro_f1,
            "per_class_f1": run.report.per_class_f1,
            "n_examples": run.report.n_examples,
            "n_parse_failures": run.report.n_parse_failures,
            "config_hash": ctx.config.config_hash(),
            "task": task.name,
            "kind": kind.as_str(),
            "shots": mode.shots,
            "with_panda": mode.with_panda,
            "ablation": ablation.as_str(),
            "k": setup.retrieval.k,
            "seed": ctx.config.seed,
            "model": ctx.gateway.model(),
            "embedder_id": embedder.id(),
            "inputs": inputs,
            "provider_calls": ctx.gateway.provider_calls(),
        }
    });
    jsonl_line(&mut report, &summary);
    let input_paths: Vec<&Path> = [Some(args.data.as_path()), args.train.as_deref(), args.pool.as_deref(), args.expert.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    write_output(&args.report, &input_paths, &report)?;
    writeln!(out, "macro_f1={:?}", run.report.macro_f1).map_err(runtime_error)?;
    Ok(())
}

fn cmd_flip(cli: &Cli, args: &FlipArgs, env: &dyn Fn(&str) -> Option<String>, out: &mut dyn Write) -> Result<(), CliError> {
    let config = resolve_config(cli, env, &[])?;
    let spec = FlipSpec {
        target_accuracy: args.ta,
        seed: config.seed,
        num_classes: args.num_classes,
    };
    spec.validate().map_err(config_error)?;
    let dataset = load_dataset(&args.data, args.num_classes)?;
    let flipped = flip_labels(&dataset.examples, &spec).map_err(config_error)?;
    let changed = flipped.iter().zip(&dataset.examples).filter(|(a, b)| a.gold != b.gold).count();
    let body = dataset.render_with(&flipped);
    write_output(&args.out, &[&args.data], body.as_bytes())?;
    let manifest = json!({
        "command": "flip",
        "config_hash": config.config_hash(),
        "seed": spec.seed,
        "ta": spec.target_accuracy,
        "num_classes": spec.num_classes,
        "n": dataset.len(),
        "flip_count": changed,
        "achieved_accuracy": if dataset.is_empty() { 1.0 } else { (dataset.len() - changed) as f64 / dataset.len() as f64 },
        "inputs": { "data": { "path": args.data.display().to_string(), "sha256": file_digest(&args.data)? } },
        "output": { "path": args.out.display().to_string(), "sha256": hex::encode(Sha256::digest(body.as_bytes())) },
    });
    let manifest_path = args.manifest.clone().unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    write_output(&manifest_path, &[&args.data], format!("{manifest:#}\n").as_bytes())?;
    writeln!(out, "flip_count={changed}").map_err(runtime_error)?;
    Ok(())
}

fn cmd_episode(cli: &Cli, args: &EpisodeArgs, env: &dyn Fn(&str) -> Option<String>, services: &Services, out: &mut dyn Write) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(k) = args.k {
        extra.push(("k", k.to_string()));
    }
    let config = resolve_config(cli, env, &extra)?;
    if args.rounds == 0 {
        return Err(CliError::Config("--rounds must be at least 1".into()));
    }
    let variations: Vec<&str> = args.variations.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if variations.is_empty() {
        return Err(CliError::Config("no variations given".into()));
    }
    let init_prompt = match &args.init_prompt {
        Some(p) => read_text(p)?,
        None => DEFAULT_INIT_PROMPT.to_string(),
    };
    let ctx = context(config, services)?;
    let embedder = ctx.embedder.as_ref();
    let pool = args.pool.as_deref().map(|p| load_pool(p, embedder)).transpose()?;

    let mut environment: Box<dyn Environment> = match &args.env_cmd {
        Some(cmd) => {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts.next().ok_or_else(|| CliError::Config("empty --env-cmd".into()))?;
            let rest: Vec<String> = parts.collect();
            let transport = ProcessTransport::spawn(&program, &rest).map_err(|e| CliError::Config(format!("cannot start {program}: {e}")))?;
            Box::new(ProtocolEnvironment::new(transport))
        }
        None => Box::new(ToyEnvironment::new()),
    };

    let mut results = Vec::new();
    for _ in 0..args.rounds {
        for variation in &variations {
            let mut setup = AgentSetup::new(args.task.clone(), *variation, init_prompt.clone());
            if let Some(p) = &pool {
                setup = setup.with_pool(p, embedder);
            }
            setup.retrieval = RetrievalConfig::new(ctx.config.k.unwrap_or(RetrievalConfig::AGENT_DEFAULT_K));
            setup.step_cap = args.step_cap;
            setup.refresh_per_step = !args.no_refresh;
            setup.temperature = ctx.config.temperature;
            results.push(run_agent_episode(environment.as_mut(), &setup, &ctx.gateway).map_err(|e| match e {
                crate::eval::EvalError::Config(m) => CliError::Config(m),
                other => runtime_error(other),
            })?);
        }
    }
    let aggregate = aggregate_episodes(&results, args.rounds).map_err(runtime_error)?;
    if let Some(path) = &args.report {
        let mut report = Vec::new();
        for r in &results {
            jsonl_line(&mut report, r);
        }
        let mut inputs = Vec::new();
        for p in [&args.pool, &args.init_prompt].into_iter().flatten() {
            inputs.push(json!({ "path": p.display().to_string(), "sha256": file_digest(p)? }));
        }
        jsonl_line(
            &mut report,
            &json!({
                "summary": aggregate,
                "config_hash": ctx.config.config_hash(),
                "with_panda": pool.is_some(),
                "step_cap": args.step_cap,
                "inputs": inputs,
                "provider_calls": ctx.gateway.provider_calls(),
            }),
        );
        let input_paths: Vec<&Path> = [args.pool.as_deref(), args.init_prompt.as_deref()].into_iter().flatten().collect();
        write_output(path, &input_paths, &report)?;
    }
    writeln!(out, "mean_score={:?}", aggregate.mean_score).map_err(runtime_error)?;
    Ok(())
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: &Cli, env: &dyn Fn(&str) -> Option<String>, services: &Services, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Learn(a) => cmd_learn(cli, a, env, services, out),
        Command::Eval(a) => cmd_eval(cli, a, env, services, out),
        Command::Flip(a) => cmd_flip(cli, a, env, out),
        Command::Episode(a) => cmd_episode(cli, a, env, services, out),
        Command::ServeToyEnv => ToyEnvironment::new()
            .serve(io::stdin().lock(), io::stdout().lock())
            .map_err(runtime_error),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

/// Parses `args` and runs against the process environment.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    run(
        &cli,
        &|k| std::env::var(k).ok(),
        &Services::default(),
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    )
}
