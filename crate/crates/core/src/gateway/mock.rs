use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderFailure, Usage};

pub type MockFn = dyn Fn(&ChatRequest) -> Result<String, ProviderFailure> + Send + Sync;

/// One scripted reply. The first matching rule wins.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MockRule {
    /// Matches when the prompt equals this string exactly.
    #[serde(default)]
    pub prompt: Option<String>,
    /// Matches when the prompt contains this substring.
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub reply: Option<String>,
    /// When set, the rule fails with this HTTP status instead of replying.
    #[serde(default)]
    pub fail_status: Option<u16>,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            prompt: None,
            contains: Some(needle.into()),
            reply: Some(reply.into()),
            fail_status: None,
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        let exact = self.prompt.as_deref().is_none_or(|p| p == prompt);
        let sub = self.contains.as_deref().is_none_or(|c| prompt.contains(c));
        exact && sub
    }

    fn outcome(&self) -> Result<String, ProviderFailure> {
        match self.fail_status {
            Some(status) => Err(ProviderFailure::Status {
                status,
                body: "scripted failure".into(),
            }),
            None => Ok(self.reply.clone().unwrap_or_default()),
        }
    }
}

#[derive(Clone)]
pub enum MockBehavior {
    /// Always answers with the given label text.
    EchoLabel(String),
    /// Scripted rules, falling back to `default` (or a 404 failure).
    Scripted { rules: Vec<MockRule>, default: Option<String> },
    /// `INSIGHT: mock insight <digest>` with a digest of the prompt.
    Digest,
    Function(Arc<MockFn>),
}

impl fmt::Debug for MockBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockBehavior::EchoLabel(l) => f.debug_tuple("EchoLabel").field(l).finish(),
            MockBehavior::Scripted { rules, default } => f
                .debug_struct("Scripted")
                .field("rules", &rules.len())
                .field("default", default)
                .finish(),
            MockBehavior::Digest => f.write_str("Digest"),
            MockBehavior::Function(_) => f.write_str("Function"),
        }
    }
}

/// Deterministic offline provider; replies are a pure function of the request.
#[derive(Debug, Clone)]
pub struct MockProvider {
    model: String,
    behavior: MockBehavior,
}

#[derive(Deserialize)]
struct ScriptLine {
    #[serde(default)]
    default: Option<String>,
    #[serde(flatten)]
    rule: MockRule,
}

impl MockProvider {
    pub fn new(behavior: MockBehavior) -> Self {
        Self {
            model: "mock".into(),
            behavior,
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn echo_label(label: impl Into<String>) -> Self {
        Self::new(MockBehavior::EchoLabel(label.into()))
    }

    pub fn digest() -> Self {
        Self::new(MockBehavior::Digest)
    }

    pub fn scripted(rules: Vec<MockRule>, default: Option<String>) -> Self {
        Self::new(MockBehavior::Scripted { rules, default })
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, ProviderFailure> + Send + Sync + 'static,
    {
        Self::new(MockBehavior::Function(Arc::new(f)))
    }

    /// Parses a behavior spec: `echo-label:<text>`, `digest`, or
    /// `script:<path>` where the file holds one JSON rule per line and an
    /// optional `{"default": ...}` line.
    pub fn from_spec(spec: &str) -> Result<Self, String> {
        if let Some(label) = spec.strip_prefix("echo-label:") {
            return Ok(Self::echo_label(label));
        }
        if spec == "digest" {
            return Ok(Self::digest());
        }
        if let Some(path) = spec.strip_prefix("script:") {
            return Self::from_script_file(Path::new(path));
        }
        Err(format!("unknown mock behavior {spec:?}"))
    }

    pub fn from_script_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut rules = Vec::new();
        let mut default = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine =
                serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
            if parsed.default.is_some() {
                default = parsed.default;
            }
            if parsed.rule.prompt.is_some() || parsed.rule.contains.is_some() {
                rules.push(parsed.rule);
            }
        }
        Ok(Self::scripted(rules, default))
    }

    fn reply(&self, req: &ChatRequest) -> Result<String, ProviderFailure> {
        match &self.behavior {
            MockBehavior::EchoLabel(label) => Ok(label.clone()),
            MockBehavior::Scripted { rules, default } => {
                if let Some(rule) = rules.iter().find(|r| r.matches(&req.prompt)) {
                    return rule.outcome();
                }
                default.clone().ok_or_else(|| ProviderFailure::Status {
                    status: 404,
                    body: "no scripted reply".into(),
                })
            }
            MockBehavior::Digest => {
                let digest = hex::encode(Sha256::digest(req.prompt.as_bytes()));
                Ok(format!("INSIGHT: mock insight {}", &digest[..16]))
            }
            MockBehavior::Function(f) => f(req),
        }
    }
}

impl ChatProvider for MockProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        let text = self.reply(req)?;
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: req.prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
            },
            text,
            model: self.model.clone(),
            from_cache: false,
        })
    }
}
