use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderFailure, Usage};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

/// POSTs a JSON body with optional bearer auth and decodes a JSON reply.
pub fn post_json(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: &Value,
) -> Result<Value, ProviderFailure> {
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = token {
        request = request.header("Authorization", format!("Bearer {token}"));
    }
    let mut response = request.send_json(body).map_err(map_error)?;
    let status = response.status().as_u16();
    let text = response.body_mut().read_to_string().map_err(map_error)?;
    if !(200..300).contains(&status) {
        return Err(ProviderFailure::Status { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| ProviderFailure::BadResponse(e.to_string()))
}

fn map_error(err: ureq::Error) -> ProviderFailure {
    match err {
        ureq::Error::Timeout(_) => ProviderFailure::Timeout,
        ureq::Error::StatusCode(status) => ProviderFailure::Status {
            status,
            body: String::new(),
        },
        other => ProviderFailure::Transport(other.to_string()),
    }
}

/// Chat-completions provider over HTTP(S).
pub struct HttpChatProvider {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            agent: agent(Duration::from_secs(120)),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = agent(timeout);
        self
    }

    pub fn request_body(req: &ChatRequest) -> Value {
        json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    pub fn parse_body(value: Value, fallback_model: &str) -> Result<ChatResponse, ProviderFailure> {
        let body: CompletionBody =
            serde_json::from_value(value).map_err(|e| ProviderFailure::BadResponse(e.to_string()))?;
        let text = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderFailure::BadResponse("no message content in first choice".into()))?;
        Ok(ChatResponse {
            text,
            model: body.model.unwrap_or_else(|| fallback_model.to_string()),
            usage: body.usage.unwrap_or_default(),
            from_cache: false,
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        let value = post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &Self::request_body(req))?;
        Self::parse_body(value, &req.model)
    }
}
