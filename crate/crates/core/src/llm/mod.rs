//! Uniform access to language-model completions.
//!
//! A [`Gateway`] renders a catalog template, caps the number of requests in
//! flight, times the call and hands it to a [`CompletionProvider`]: the live
//! chat-completions client, the fixture-backed [`ScriptedProvider`], or a
//! [`HandlerProvider`] closure.

mod live;
pub mod parse;
mod scripted;
mod templates;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveConfig, LiveProvider};
pub use scripted::{fixture_key, HandlerProvider, ScriptedProvider};
pub use templates::{PromptCatalog, PromptTemplate, RenderedPrompt, TemplateError, TemplateName, Vars};

pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("no scripted response for `{key}`")]
    FixtureMiss { key: String },
    #[error("provider not configured: {0}")]
    NotConfigured(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub template: TemplateName,
    pub vars: Vars,
    pub model: String,
    pub temperature: f64,
}

impl CompletionRequest {
    /// SHA-256 hex of the canonically serialized bound variables
    /// (sorted keys, compact JSON).
    pub fn digest(&self) -> String {
        vars_digest(&self.vars)
    }
}

pub fn vars_digest(vars: &Vars) -> String {
    let canonical = serde_json::to_string(vars).expect("string map serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResponse {
    pub text: String,
    pub latency_ms: f64,
    pub provider_id: String,
}

pub trait CompletionProvider: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest, prompt: &RenderedPrompt) -> Result<String, GatewayError>;
}

/// Counting semaphore bounding concurrent provider calls.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightPermit { sem: self }
    }
}

struct InFlightPermit<'a> {
    sem: &'a InFlight,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.sem.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.sem.freed.notify_one();
    }
}

/// Cheaply cloneable handle; clones share the provider and the in-flight cap.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn CompletionProvider>,
    catalog: Arc<PromptCatalog>,
    model: String,
    temperature: f64,
    in_flight: Arc<InFlight>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: impl CompletionProvider + 'static) -> Self {
        Self::from_arc(Arc::new(provider))
    }

    pub fn from_arc(provider: Arc<dyn CompletionProvider>) -> Self {
        Self {
            provider,
            catalog: Arc::new(PromptCatalog::builtin()),
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            in_flight: Arc::new(InFlight::new(DEFAULT_MAX_IN_FLIGHT)),
        }
    }

    /// Live provider configured from `LLM_BASE_URL`, `LLM_API_KEY` and
    /// `LLM_MODEL`.
    pub fn live_from_env() -> Result<Self, GatewayError> {
        let cfg = LiveConfig::from_env()?;
        let model = cfg.model.clone();
        Ok(Self::new(LiveProvider::new(cfg)).with_model(model))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_catalog(mut self, catalog: PromptCatalog) -> Self {
        self.catalog = Arc::new(catalog);
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight = Arc::new(InFlight::new(limit));
        self
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn request(&self, template: TemplateName, vars: Vars) -> CompletionRequest {
        CompletionRequest {
            template,
            vars,
            model: self.model.clone(),
            temperature: self.temperature,
        }
    }

    pub fn render(&self, request: &CompletionRequest) -> Result<RenderedPrompt, GatewayError> {
        Ok(self.catalog.template(request.template).render(&request.vars)?)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let prompt = self.render(request)?;
        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let text = self.provider.complete(request, &prompt)?;
        Ok(CompletionResponse {
            text,
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
            provider_id: self.provider.id().to_string(),
        })
    }

    /// Shorthand for `complete(&request(template, vars))`.
    pub fn call(&self, template: TemplateName, vars: Vars) -> Result<CompletionResponse, GatewayError> {
        self.complete(&self.request(template, vars))
    }
}

/// Builds a [`Vars`] map from string pairs.
pub fn vars<K, V, I>(pairs: I) -> Vars
where
    K: Into<String>,
    V: Into<String>,
    I: IntoIterator<Item = (K, V)>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}
