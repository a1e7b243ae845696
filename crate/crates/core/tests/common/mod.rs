//! The toy scenario shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use semcommit_core::llm::{vars, PromptCatalog, ScriptedProvider, TemplateName};
use semcommit_core::{Action, ChangeRequest, Gateway, IntentSpec, KnowledgeGraph, Parallelism};

#[derive(Debug, Deserialize)]
pub struct ScenarioChunk {
    pub text: String,
    pub extraction: Value,
}

#[derive(Debug, Deserialize)]
pub struct Expect {
    pub candidates: Vec<String>,
    pub flags: BTreeMap<String, String>,
    pub pattern: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
pub struct ScenarioRequest {
    pub name: String,
    pub action: Action,
    pub new_info: String,
    pub extraction: Value,
    pub verdicts: BTreeMap<String, (String, String)>,
    pub rewrite: Option<String>,
    pub expect: Expect,
}

impl ScenarioRequest {
    pub fn change_request(&self) -> ChangeRequest {
        ChangeRequest::new(self.action, self.new_info.clone())
    }
}

#[derive(Debug, Deserialize)]
pub struct Scenario {
    pub chunks: Vec<ScenarioChunk>,
    pub requests: Vec<ScenarioRequest>,
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

impl Scenario {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(fixtures_dir().join("toy_scenario.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    pub fn request(&self, name: &str) -> &ScenarioRequest {
        self.requests.iter().find(|r| r.name == name).unwrap()
    }

    pub fn spec(&self) -> IntentSpec {
        IntentSpec::from_texts(self.chunks.iter().map(|c| c.text.clone()))
    }

    pub fn markdown(&self) -> String {
        self.chunks.iter().map(|c| format!("- {}\n", c.text)).collect()
    }

    /// Every response the scenario can ask for: extraction of each chunk and
    /// request, a verdict for every (chunk, request) pair, and the rewrite of
    /// the expected flagged set.
    pub fn provider(&self) -> ScriptedProvider {
        let catalog = PromptCatalog::builtin();
        let mut p = ScriptedProvider::new();
        for c in &self.chunks {
            p.insert(TemplateName::EntityExtract, &vars([("text", c.text.as_str())]), c.extraction.to_string());
        }
        for r in &self.requests {
            p.insert(TemplateName::EntityExtract, &vars([("text", r.new_info.as_str())]), r.extraction.to_string());
            for (i, c) in self.chunks.iter().enumerate() {
                let (token, reason) = r
                    .verdicts
                    .get(&format!("c{i}"))
                    .cloned()
                    .unwrap_or_else(|| ("no".into(), "Unrelated.".into()));
                p.insert(
                    TemplateName::ConflictClassify,
                    &vars([("existing_info", c.text.as_str()), ("new_info", r.new_info.as_str())]),
                    serde_json::json!({"reasoning": reason, "is_conflicting": token}).to_string(),
                );
            }
            if let Some(rewrite) = &r.rewrite {
                let mut ordinals: Vec<usize> = r.expect.flags.keys().map(|id| id[1..].parse().unwrap()).collect();
                ordinals.sort_unstable();
                let flagged: Vec<&str> = ordinals.iter().map(|&i| self.chunks[i].text.as_str()).collect();
                let all_docs = flagged
                    .iter()
                    .enumerate()
                    .map(|(i, t)| format!("{}. {t}", i + 1))
                    .collect::<Vec<_>>()
                    .join("\n");
                let extension = if r.action == Action::Change {
                    catalog.rewrite_change_extension().to_string()
                } else {
                    String::new()
                };
                p.insert(
                    TemplateName::GlobalRewrite,
                    &vars([
                        ("action_instructions", r.action.rewrite_instructions().to_string()),
                        ("newInfo", r.new_info.clone()),
                        ("all_docs", all_docs),
                        ("extension", extension),
                    ]),
                    rewrite.clone(),
                );
            }
        }
        p
    }

    pub fn world(&self) -> (IntentSpec, KnowledgeGraph, Gateway) {
        let spec = self.spec();
        let gw = Gateway::new(self.provider());
        let graph = KnowledgeGraph::induce(&spec, &gw, Parallelism::Sequential);
        (spec, graph, gw)
    }
}

pub fn sha256_texts(texts: &[&str]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in texts {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    hex::encode(h.finalize())
}
