use std::collections::BTreeMap;
use std::path::Path;

use super::{vars_digest, CompletionProvider, CompletionRequest, GatewayError, RenderedPrompt, TemplateName, Vars};

/// `"template:digest"` key used by fixture files.
pub fn fixture_key(template: TemplateName, vars: &Vars) -> String {
    format!("{}:{}", template, vars_digest(vars))
}

/// Replays responses from a fixture map keyed by `"template:digest"`.
/// Immutable once built, so identical requests always get identical text.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    responses: BTreeMap<String, String>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let responses: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| GatewayError::NotConfigured(format!("fixture file: {e}")))?;
        Ok(Self { responses })
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::NotConfigured(format!("fixture file {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Registers `response` for `template` bound with `vars`.
    pub fn respond(mut self, template: TemplateName, vars: &Vars, response: impl Into<String>) -> Self {
        self.insert(template, vars, response);
        self
    }

    pub fn insert(&mut self, template: TemplateName, vars: &Vars, response: impl Into<String>) {
        self.responses.insert(fixture_key(template, vars), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.responses).expect("fixture map serializes")
    }
}

impl CompletionProvider for ScriptedProvider {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest, _prompt: &RenderedPrompt) -> Result<String, GatewayError> {
        let key = fixture_key(request.template, &request.vars);
        self.responses
            .get(&key)
            .cloned()
            .ok_or(GatewayError::FixtureMiss { key })
    }
}

type Handler = dyn Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync;

/// Provider backed by a closure; handy for rule-based test doubles such as
/// a perfect-oracle classifier.
pub struct HandlerProvider {
    id: String,
    handler: Box<Handler>,
}

impl HandlerProvider {
    pub fn new<F>(id: impl Into<String>, handler: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            handler: Box::new(handler),
        }
    }
}

impl CompletionProvider for HandlerProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest, _prompt: &RenderedPrompt) -> Result<String, GatewayError> {
        (self.handler)(request)
    }
}
