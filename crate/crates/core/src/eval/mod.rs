//! Evaluation: macro-F1 scoring, classification runs, agent episodes and
//! label-flipping for training-quality ablations.

pub mod agent;
pub mod classification;
pub mod flip;
pub mod metrics;

use thiserror::Error;

pub use agent::{
    aggregate_episodes, run_agent_episode, AgentSetup, EnvExtra, EnvRequest, EnvResponse, Environment,
    EpisodeAggregate, EpisodeResult, LineTransport, ProcessTransport, ProtocolEnvironment, StreamTransport,
    Termination, ToyEnvironment,
};
pub use classification::{run_classification_eval, select_exemplars, ClassificationRun, ClassificationSetup, ExampleRecord, ExemplarIndex};
pub use flip::{flip_labels, FlipSpec};
pub use metrics::{macro_f1, ClassificationReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no examples to score")]
    EmptyInput,
    #[error("label {label} outside 0..{num_classes}")]
    InvalidLabel { label: i64, num_classes: usize },
    #[error("target accuracy must be in (0, 1], got {0}")]
    InvalidTa(f64),
    #[error("no episode results to aggregate")]
    EmptyResults,
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("environment protocol error: {0}")]
    EnvProtocol(String),
}
