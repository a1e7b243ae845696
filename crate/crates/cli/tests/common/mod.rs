#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semcommit_core::llm::{fixture_key, HandlerProvider, ScriptedProvider, TemplateName};
use semcommit_core::store::SourceFormat;
use semcommit_core::{Gateway, GatewayError, IntentSpec, KnowledgeGraph, Parallelism};

pub const SWIMMER: &str = "Ida is an expert swimmer who dives through flooded corridors.";
pub const CHOIR: &str = "The soundtrack may add a small choir.";

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn toy_spec_md() -> String {
    std::fs::read_to_string(toy_dir().join("toy_spec.md")).unwrap()
}

pub fn toy_fixtures() -> PathBuf {
    toy_dir().join("toy_fixtures.json")
}

pub fn toy_spec() -> IntentSpec {
    IntentSpec::load_spec(toy_spec_md().as_bytes(), SourceFormat::MarkdownList).unwrap()
}

pub fn scripted() -> Gateway {
    Gateway::new(ScriptedProvider::from_file(&toy_fixtures()).unwrap())
}

/// The scripted toy responses, plus `extra` for templates the fixtures
/// leave out.
pub fn scripted_with<F>(extra: F) -> Gateway
where
    F: Fn(TemplateName) -> Option<String> + Send + Sync + 'static,
{
    let map: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(toy_fixtures()).unwrap()).unwrap();
    Gateway::new(HandlerProvider::new("toy+", move |req| {
        if let Some(r) = extra(req.template) {
            return Ok(r);
        }
        let key = fixture_key(req.template, &req.vars);
        map.get(&key).cloned().ok_or(GatewayError::FixtureMiss { key })
    }))
}

pub fn toy_world(gw: &Gateway) -> (IntentSpec, KnowledgeGraph) {
    let spec = toy_spec();
    let graph = KnowledgeGraph::induce(&spec, gw, Parallelism::Sequential);
    (spec, graph)
}
