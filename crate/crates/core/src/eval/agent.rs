//! Interactive episodes against a text environment speaking a line-delimited
//! JSON protocol, plus an in-process toy environment.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::{ChatRequest, Gateway, MAX_TOKENS_AGENT};
use crate::inference::{render_inference_prompt_agent, RetrievedText};
use crate::pool::InsightPool;
use crate::retrieval::{top_k_retrieve, EmbeddingProvider, RetrievalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EnvRequest {
    Reset { task: String, variation: String },
    Step { action: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvExtra {
    #[serde(default)]
    pub room: String,
    #[serde(default)]
    pub inventory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvResponse {
    pub observation: String,
    pub score: f64,
    pub done: bool,
    #[serde(default)]
    pub extra: EnvExtra,
}

impl EnvResponse {
    /// Observation extended with inventory and room description.
    pub fn extended_observation(&self) -> String {
        let mut parts = vec![self.observation.trim()];
        for extra in [self.extra.inventory.trim(), self.extra.room.trim()] {
            if !extra.is_empty() {
                parts.push(extra);
            }
        }
        parts.join("; ")
    }
}

pub trait Environment {
    fn reset(&mut self, task: &str, variation: &str) -> Result<EnvResponse, EvalError>;
    fn step(&mut self, action: &str) -> Result<EnvResponse, EvalError>;
    fn score_range(&self) -> (f64, f64) {
        (0.0, 100.0)
    }
}

/// Sends one request line and reads one response line.
pub trait LineTransport {
    fn roundtrip(&mut self, line: &str) -> io::Result<String>;
}

pub struct StreamTransport<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> StreamTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }
}

impl<R: BufRead, W: Write> LineTransport for StreamTransport<R, W> {
    fn roundtrip(&mut self, line: &str) -> io::Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut out = String::new();
        if self.reader.read_line(&mut out)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "environment closed the stream"));
        }
        Ok(out)
    }
}

/// An environment running as a child process on stdin/stdout.
pub struct ProcessTransport {
    child: Child,
    inner: StreamTransport<BufReader<ChildStdout>, ChildStdin>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            inner: StreamTransport::new(BufReader::new(stdout), stdin),
        })
    }
}

impl LineTransport for ProcessTransport {
    fn roundtrip(&mut self, line: &str) -> io::Result<String> {
        self.inner.roundtrip(line)
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ProtocolEnvironment<T> {
    transport: T,
}

impl<T: LineTransport> ProtocolEnvironment<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }

    fn call(&mut self, req: &EnvRequest) -> Result<EnvResponse, EvalError> {
        let line = serde_json::to_string(req).expect("request serializes");
        let reply = self
            .transport
            .roundtrip(&line)
            .map_err(|e| EvalError::EnvProtocol(e.to_string()))?;
        serde_json::from_str(reply.trim()).map_err(|e| EvalError::EnvProtocol(format!("bad response {:?}: {e}", reply.trim())))
    }
}

impl<T: LineTransport> Environment for ProtocolEnvironment<T> {
    fn reset(&mut self, task: &str, variation: &str) -> Result<EnvResponse, EvalError> {
        self.call(&EnvRequest::Reset {
            task: task.into(),
            variation: variation.into(),
        })
    }

    fn step(&mut self, action: &str) -> Result<EnvResponse, EvalError> {
        self.call(&EnvRequest::Step { action: action.into() })
    }
}

const TOY_COLORS: [&str; 4] = ["green", "blue", "yellow", "red"];

/// A one-room puzzle: pressing the right button (which depends on the
/// variation) scores 100, pressing any other button ends the episode at 0.
#[derive(Debug, Clone, Default)]
pub struct ToyEnvironment {
    winner: usize,
    score: f64,
    done: bool,
    started: bool,
}

impl ToyEnvironment {
    pub fn new() -> Self {
        Self::default()
    }

    /// The winning action for a variation id.
    pub fn winning_action(variation: &str) -> String {
        format!("press {} button", TOY_COLORS[Self::winner_index(variation)])
    }

    fn winner_index(variation: &str) -> usize {
        variation.trim().parse::<usize>().unwrap_or(0) % TOY_COLORS.len()
    }

    fn respond(&self, observation: impl Into<String>) -> EnvResponse {
        EnvResponse {
            observation: observation.into(),
            score: self.score,
            done: self.done,
            extra: EnvExtra {
                room: "This room is called the vault room.".into(),
                inventory: "In your inventory, you see: a brass key.".into(),
            },
        }
    }

    fn describe() -> String {
        let buttons: Vec<String> = TOY_COLORS.iter().map(|c| format!("a {c} button")).collect();
        format!("In it, you see: {}, and a steel vault door.", buttons.join(", "))
    }

    /// Answers one protocol line.
    pub fn handle_line(&mut self, line: &str) -> String {
        let reply = match serde_json::from_str::<EnvRequest>(line.trim()) {
            Ok(EnvRequest::Reset { task, variation }) => self.reset(&task, &variation),
            Ok(EnvRequest::Step { action }) => self.step(&action),
            Err(e) => Err(EvalError::EnvProtocol(e.to_string())),
        };
        match reply {
            Ok(r) => serde_json::to_string(&r).expect("response serializes"),
            Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
        }
    }

    /// Serves the protocol until EOF.
    pub fn serve<R: BufRead, W: Write>(&mut self, reader: R, mut writer: W) -> io::Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(writer, "{}", self.handle_line(&line))?;
            writer.flush()?;
        }
        Ok(())
    }
}

impl Environment for ToyEnvironment {
    fn reset(&mut self, _task: &str, variation: &str) -> Result<EnvResponse, EvalError> {
        self.winner = Self::winner_index(variation);
        self.score = 0.0;
        self.done = false;
        self.started = true;
        Ok(self.respond(format!("Your task is to open the vault. {}", Self::describe())))
    }

    fn step(&mut self, action: &str) -> Result<EnvResponse, EvalError> {
        if !self.started {
            return Err(EvalError::EnvProtocol("step before reset".into()));
        }
        if self.done {
            return Ok(self.respond("The episode is over."));
        }
        let action = action.trim().to_lowercase();
        if action == "look around" {
            return Ok(self.respond(format!("This room is called the vault room. {}", Self::describe())));
        }
        if let Some(color) = action.strip_prefix("press ").and_then(|a| a.strip_suffix(" button")) {
            if let Some(idx) = TOY_COLORS.iter().position(|c| *c == color) {
                self.done = true;
                if idx == self.winner {
                    self.score = 100.0;
                    return Ok(self.respond("The vault door swings open."));
                }
                return Ok(self.respond("An alarm sounds and the vault locks for good."));
            }
        }
        Ok(self.respond("Nothing happens."))
    }
}

impl LineTransport for ToyEnvironment {
    fn roundtrip(&mut self, line: &str) -> io::Result<String> {
        Ok(self.handle_line(line))
    }
}

pub struct AgentSetup<'a> {
    pub task: String,
    pub variation: String,
    pub init_prompt: String,
    pub pool: Option<&'a InsightPool>,
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    pub retrieval: RetrievalConfig,
    pub step_cap: usize,
    /// Re-retrieve on every step rather than only on the first.
    pub refresh_per_step: bool,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl<'a> AgentSetup<'a> {
    pub fn new(task: impl Into<String>, variation: impl Into<String>, init_prompt: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            variation: variation.into(),
            init_prompt: init_prompt.into(),
            pool: None,
            embedder: None,
            retrieval: RetrievalConfig::new(RetrievalConfig::AGENT_DEFAULT_K),
            step_cap: 30,
            refresh_per_step: true,
            max_tokens: MAX_TOKENS_AGENT,
            temperature: 0.0,
        }
    }

    pub fn with_pool(mut self, pool: &'a InsightPool, embedder: &'a dyn EmbeddingProvider) -> Self {
        self.pool = Some(pool);
        self.embedder = Some(embedder);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum Termination {
    Done,
    StepCapExceeded,
    GatewayError(String),
    RetrievalError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub variation_id: String,
    pub score: f64,
    pub steps: usize,
    pub trajectory: String,
    pub termination: Termination,
    /// Insight ids inserted at each step.
    pub inserted_insights: Vec<Vec<String>>,
}

/// Trajectory text: first observation, then `> action` / observation pairs,
/// ending with the action prompt.
fn render_trajectory(lines: &[String]) -> String {
    let mut out = lines.join("\n");
    out.push_str("\n>");
    out
}

/// First non-empty line of the model's reply, minus any `>` or `Action:` lead.
pub fn parse_action(reply: &str) -> String {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let line = line.trim_start_matches('>').trim();
    let line = line
        .strip_prefix("Action:")
        .or_else(|| line.strip_prefix("action:"))
        .unwrap_or(line);
    line.trim().to_string()
}

fn check_score(env: &dyn Environment, resp: &EnvResponse) -> Result<(), EvalError> {
    let (lo, hi) = env.score_range();
    if !resp.score.is_finite() || resp.score < lo || resp.score > hi {
        return Err(EvalError::EnvProtocol(format!("score {} outside [{lo}, {hi}]", resp.score)));
    }
    Ok(())
}

/// Runs one episode: reset, then act until done or the step cap.
pub fn run_agent_episode(
    env: &mut dyn Environment,
    setup: &AgentSetup<'_>,
    gateway: &Gateway,
) -> Result<EpisodeResult, EvalError> {
    if setup.pool.is_some() != setup.embedder.is_some() {
        return Err(EvalError::Config("a pool needs an embedder".into()));
    }
    setup.retrieval.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    let first = env.reset(&setup.task, &setup.variation)?;
    check_score(env, &first)?;
    let mut lines = vec![first.extended_observation()];
    let mut score = first.score;
    let mut done = first.done;
    let mut steps = 0;
    let mut insights: Vec<RetrievedText> = Vec::new();
    let mut inserted = Vec::new();
    let mut latest = first.extended_observation();

    let termination = loop {
        if done {
            break Termination::Done;
        }
        if steps >= setup.step_cap {
            break Termination::StepCapExceeded;
        }
        if let (Some(pool), Some(embedder)) = (setup.pool, setup.embedder) {
            if steps == 0 || setup.refresh_per_step {
                match top_k_retrieve(pool, &latest, &setup.retrieval, embedder) {
                    Ok(hits) => {
                        insights = hits
                            .hits
                            .iter()
                            .map(|h| RetrievedText {
                                id: h.id.clone(),
                                text: pool.get(&h.id).expect("hit id in pool").insight.text.clone(),
                            })
                            .collect()
                    }
                    Err(e) => break Termination::RetrievalError(e.to_string()),
                }
            }
        }
        let prompt = render_inference_prompt_agent(&setup.init_prompt, &insights, &render_trajectory(&lines))
            .map_err(|e| EvalError::Config(e.to_string()))?;
        inserted.push(prompt.inserted_insights);
        let req = ChatRequest::new(gateway.model(), prompt.text, setup.max_tokens).with_temperature(setup.temperature);
        let reply = match gateway.cached_complete(&req) {
            Ok(r) => r.text,
            Err(e) => break Termination::GatewayError(e.to_string()),
        };
        let action = parse_action(&reply);
        let resp = env.step(&action)?;
        check_score(env, &resp)?;
        steps += 1;
        score = resp.score;
        done = resp.done;
        latest = resp.extended_observation();
        lines.push(format!("> {action}"));
        lines.push(latest.clone());
    };

    Ok(EpisodeResult {
        task_id: setup.task.clone(),
        variation_id: setup.variation.clone(),
        score,
        steps,
        trajectory: render_trajectory(&lines),
        termination,
        inserted_insights: inserted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationMean {
    pub task_id: String,
    pub variation_id: String,
    pub mean: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskMean {
    pub task_id: String,
    pub mean: f64,
    pub variations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeAggregate {
    pub rounds: usize,
    pub per_variation: Vec<VariationMean>,
    pub per_task: Vec<TaskMean>,
    /// Mean over tasks of each task's mean over variations.
    pub mean_score: f64,
    /// Variations with a number of episodes other than `rounds`.
    pub incomplete: Vec<(String, String, usize)>,
}

/// Averages scores per variation over rounds, then per task over variations.
pub fn aggregate_episodes(results: &[EpisodeResult], rounds: usize) -> Result<EpisodeAggregate, EvalError> {
    if rounds == 0 {
        return Err(EvalError::ZeroRounds);
    }
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let mut by_var: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in results {
        by_var.entry((&r.task_id, &r.variation_id)).or_default().push(r.score);
    }
    let mut per_variation = Vec::new();
    let mut incomplete = Vec::new();
    let mut by_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((task, var), scores) in &by_var {
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        if scores.len() != rounds {
            incomplete.push((task.to_string(), var.to_string(), scores.len()));
        }
        per_variation.push(VariationMean {
            task_id: task.to_string(),
            variation_id: var.to_string(),
            mean,
            episodes: scores.len(),
        });
        by_task.entry(task).or_default().push(mean);
    }
    let per_task: Vec<TaskMean> = by_task
        .into_iter()
        .map(|(task, means)| TaskMean {
            task_id: task.to_string(),
            mean: means.iter().sum::<f64>() / means.len() as f64,
            variations: means.len(),
        })
        .collect();
    let mean_score = per_task.iter().map(|t| t.mean).sum::<f64>() / per_task.len() as f64;
    Ok(EpisodeAggregate {
        rounds,
        per_variation,
        per_task,
        mean_score,
        incomplete,
    })
}
