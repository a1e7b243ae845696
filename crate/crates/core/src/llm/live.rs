use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use tracing::warn;

use super::{CompletionProvider, CompletionRequest, GatewayError, RenderedPrompt, DEFAULT_MODEL};

pub const ENV_BASE_URL: &str = "LLM_BASE_URL";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_MODEL: &str = "LLM_MODEL";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g.
    /// `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var(ENV_BASE_URL)
            .map_err(|_| GatewayError::NotConfigured(format!("{ENV_BASE_URL} is not set")))?;
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Ok(cfg)
    }
}

/// OpenAI-compatible chat-completions client with bounded retries.
pub struct LiveProvider {
    cfg: LiveConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
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

impl LiveProvider {
    pub fn new(cfg: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Self { cfg, agent }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url)
    }

    /// The JSON body sent for `request`.
    pub fn body(request: &CompletionRequest, prompt: &RenderedPrompt) -> serde_json::Value {
        let mut messages = Vec::new();
        if !prompt.system.is_empty() {
            messages.push(json!({"role": "system", "content": prompt.system}));
        }
        messages.push(json!({"role": "user", "content": prompt.input}));
        json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
        })
    }

    fn attempt(&self, body: &str) -> Result<String, String> {
        let mut req = self.agent.post(&self.endpoint()).content_type("application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| format!("malformed completion body: {e}"))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| "completion has no choices".to_string())
    }
}

impl CompletionProvider for LiveProvider {
    fn id(&self) -> &str {
        "live"
    }

    fn complete(&self, request: &CompletionRequest, prompt: &RenderedPrompt) -> Result<String, GatewayError> {
        let body = Self::body(request, prompt).to_string();
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    warn!(template = %request.template, attempt = attempt + 1, error = %e, "completion failed");
                    last = e;
                }
            }
        }
        Err(GatewayError::Provider {
            attempts,
            message: last,
        })
    }
}
