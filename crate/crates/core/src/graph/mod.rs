//! Entity/relation graph induced from chunks, and retrieval over it.
//!
//! Nodes are deduplicated by [`normalize`]d name and remember which chunks
//! mention them. Edges keep the free-text relation label for display only;
//! ranking treats the graph as undirected and unweighted.

mod ppr;
pub(crate) mod retrieval;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::llm::parse::{parse_extraction, Extraction};
use crate::llm::{vars, Gateway, TemplateName};
use crate::parallel::{self, Parallelism};
use crate::store::{ChunkId, ChunkState, IntentSpec};

pub use ppr::{adjacency_from_edges, personalized, PprConfig, PprError, PprResult};
pub use retrieval::{retrieve_candidates, Candidate, Retrieval};

/// Lowercases, collapses runs of whitespace and strips leading/trailing
/// punctuation.
pub fn normalize(name: &str) -> String {
    let collapsed = name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || is_unicode_quote(c) || c.is_whitespace())
        .to_string()
}

fn is_unicode_quote(c: char) -> bool {
    matches!(c, '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{00AB}' | '\u{00BB}' | '\u{2026}')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    pub canonical_name: String,
    pub norm_key: String,
    pub mentions: BTreeSet<ChunkId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: String,
    pub dst: String,
    pub label: String,
    pub provenance: BTreeSet<ChunkId>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed graph file: {0}")]
    Format(String),
    #[error(transparent)]
    Ppr(#[from] PprError),
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<EntityNode>,
    edges: Vec<RelationEdge>,
    /// Text each chunk had when it was last extracted.
    #[serde(default)]
    sources: BTreeMap<ChunkId, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    /// Keyed by norm_key, which is unique.
    nodes: BTreeMap<String, EntityNode>,
    /// id -> norm_key
    ids: BTreeMap<String, String>,
    edges: BTreeMap<(String, String, String), BTreeSet<ChunkId>>,
    sources: BTreeMap<ChunkId, String>,
    next_id: u64,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRankScores {
    /// Entity id -> score.
    pub scores: BTreeMap<String, f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Extracts entities and triples from every committed chunk (one
    /// completion per chunk, fanned out under `mode`). A chunk whose
    /// extraction fails contributes nothing and leaves a warning.
    pub fn induce(spec: &IntentSpec, gateway: &Gateway, mode: Parallelism) -> Self {
        let work: Vec<(ChunkId, String)> = spec
            .chunks()
            .iter()
            .filter(|c| c.state() != ChunkState::ProposedAdd)
            .map(|c| (c.id().clone(), c.text().to_string()))
            .collect();
        let extracted = parallel::map(&work, mode, |(_, text)| extract(gateway, text));
        let mut graph = Self::new();
        for ((id, text), result) in work.into_iter().zip(extracted) {
            match result {
                Ok(x) => graph.insert_extraction(&id, &x),
                Err(msg) => graph.warn(format!("chunk {id}: {msg}")),
            }
            graph.sources.insert(id, text);
        }
        graph
    }

    pub fn nodes(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = RelationEdge> + '_ {
        self.edges.iter().map(|((src, dst, label), prov)| RelationEdge {
            src: src.clone(),
            dst: dst.clone(),
            label: label.clone(),
            provenance: prov.clone(),
        })
    }

    pub fn node_by_key(&self, norm_key: &str) -> Option<&EntityNode> {
        self.nodes.get(norm_key)
    }

    pub fn node(&self, id: &str) -> Option<&EntityNode> {
        self.ids.get(id).and_then(|k| self.nodes.get(k))
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    /// Entities mentioned by `chunk`, in norm_key order.
    pub fn entities_of(&self, chunk: &ChunkId) -> impl Iterator<Item = &EntityNode> + '_ {
        let chunk = chunk.clone();
        self.nodes.values().filter(move |n| n.mentions.contains(&chunk))
    }

    /// Node and edge sets, ignoring ids: `(norm_key, mentions)` and
    /// `(src key, dst key, label, provenance)`.
    pub fn structure(&self) -> (BTreeSet<(String, BTreeSet<ChunkId>)>, BTreeSet<(String, String, String, BTreeSet<ChunkId>)>) {
        let nodes = self.nodes.values().map(|n| (n.norm_key.clone(), n.mentions.clone())).collect();
        let edges = self
            .edges
            .iter()
            .map(|((s, d, l), p)| (self.ids[s].clone(), self.ids[d].clone(), l.clone(), p.clone()))
            .collect();
        (nodes, edges)
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    fn node_for(&mut self, name: &str) -> Option<String> {
        let key = normalize(name);
        if key.is_empty() {
            return None;
        }
        if let Some(n) = self.nodes.get(&key) {
            return Some(n.id.clone());
        }
        let id = format!("e{}", self.next_id);
        self.next_id += 1;
        self.ids.insert(id.clone(), key.clone());
        self.nodes.insert(
            key.clone(),
            EntityNode {
                id: id.clone(),
                canonical_name: name.trim().to_string(),
                norm_key: key,
                mentions: BTreeSet::new(),
            },
        );
        Some(id)
    }

    fn mention(&mut self, id: &str, chunk: &ChunkId) {
        let key = &self.ids[id];
        if let Some(n) = self.nodes.get_mut(key) {
            n.mentions.insert(chunk.clone());
        }
    }

    fn insert_extraction(&mut self, chunk: &ChunkId, x: &Extraction) {
        for name in x.all_entities() {
            if let Some(id) = self.node_for(name) {
                self.mention(&id, chunk);
            }
        }
        for t in &x.triples {
            let (Some(src), Some(dst)) = (self.node_for(&t.subject), self.node_for(&t.object)) else {
                continue;
            };
            if src == dst {
                continue;
            }
            self.edges
                .entry((src, dst, t.relation.trim().to_string()))
                .or_default()
                .insert(chunk.clone());
        }
    }

    fn remove_chunk(&mut self, chunk: &ChunkId) {
        for n in self.nodes.values_mut() {
            n.mentions.remove(chunk);
        }
        self.edges.retain(|_, prov| {
            prov.remove(chunk);
            !prov.is_empty()
        });
        self.sources.remove(chunk);
    }

    fn prune(&mut self) {
        let dead: Vec<String> = self
            .nodes
            .values()
            .filter(|n| n.mentions.is_empty())
            .map(|n| n.id.clone())
            .collect();
        for id in &dead {
            if let Some(key) = self.ids.remove(id) {
                self.nodes.remove(&key);
            }
        }
        self.edges
            .retain(|(s, d, _), _| self.ids.contains_key(s) && self.ids.contains_key(d));
    }

    /// Replaces everything `chunk` contributed with an extraction of
    /// `new_text`. Empty text only removes. Nodes left without mentions are
    /// pruned. A failed extraction leaves the chunk out and adds a warning.
    pub fn update_for_chunk(&mut self, chunk: &ChunkId, new_text: &str, gateway: &Gateway) {
        let extracted = (!new_text.is_empty()).then(|| extract(gateway, new_text));
        self.remove_chunk(chunk);
        match extracted {
            None => {}
            Some(Ok(x)) => {
                self.insert_extraction(chunk, &x);
                self.sources.insert(chunk.clone(), new_text.to_string());
            }
            Some(Err(msg)) => {
                self.warn(format!("chunk {chunk}: {msg}"));
                self.sources.insert(chunk.clone(), new_text.to_string());
            }
        }
        self.prune();
    }

    /// Brings the graph in line with `spec`: drops chunks that no longer
    /// exist and re-extracts chunks whose committed text changed since they
    /// were last seen. Returns the ids that were touched.
    pub fn sync(&mut self, spec: &IntentSpec, gateway: &Gateway) -> Vec<ChunkId> {
        let live: BTreeMap<&ChunkId, &str> = spec
            .chunks()
            .iter()
            .filter(|c| c.state() != ChunkState::ProposedAdd)
            .map(|c| (c.id(), c.text()))
            .collect();
        let mut touched = Vec::new();
        let stale: Vec<ChunkId> = self.sources.keys().filter(|id| !live.contains_key(id)).cloned().collect();
        for id in stale {
            self.update_for_chunk(&id, "", gateway);
            touched.push(id);
        }
        for (id, text) in live {
            if self.sources.get(id).map(String::as_str) != Some(text) {
                self.update_for_chunk(id, text, gateway);
                touched.push(id.clone());
            }
        }
        touched.sort();
        touched.dedup();
        touched
    }

    /// Every mention and provenance refers to a chunk of `spec`.
    pub fn check_consistency(&self, spec: &IntentSpec) -> Result<(), String> {
        let ids: BTreeSet<&ChunkId> = spec.chunks().iter().map(|c| c.id()).collect();
        for n in self.nodes.values() {
            if n.norm_key != normalize(&n.canonical_name) {
                return Err(format!("node {} has stale norm_key", n.id));
            }
            if n.mentions.is_empty() {
                return Err(format!("node {} has no mentions", n.id));
            }
            if let Some(c) = n.mentions.iter().find(|c| !ids.contains(c)) {
                return Err(format!("node {} mentions unknown chunk {c}", n.id));
            }
        }
        for ((s, d, _), prov) in &self.edges {
            if s == d || !self.ids.contains_key(s) || !self.ids.contains_key(d) {
                return Err(format!("edge {s}->{d} has bad endpoints"));
            }
            if let Some(c) = prov.iter().find(|c| !ids.contains(c)) {
                return Err(format!("edge {s}->{d} cites unknown chunk {c}"));
            }
        }
        Ok(())
    }

    /// Node ids in norm_key order with undirected adjacency over them.
    pub(crate) fn adjacency(&self) -> (Vec<&EntityNode>, Vec<Vec<usize>>) {
        let order: Vec<&EntityNode> = self.nodes.values().collect();
        let index: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let adj = adjacency_from_edges(
            order.len(),
            self.edges.keys().map(|(s, d, _)| (index[s.as_str()], index[d.as_str()])),
        );
        (order, adj)
    }

    pub fn personalized_pagerank(&self, seeds: &BTreeSet<String>, cfg: &PprConfig) -> Result<PageRankScores, PprError> {
        if seeds.is_empty() {
            return Err(PprError::EmptySeeds);
        }
        let (order, adj) = self.adjacency();
        let mut seed_idx = Vec::with_capacity(seeds.len());
        for s in seeds {
            let i = order
                .iter()
                .position(|n| &n.id == s)
                .ok_or_else(|| PprError::UnknownSeed(s.clone()))?;
            seed_idx.push(i);
        }
        let r = personalized(&adj, &seed_idx, cfg)?;
        Ok(PageRankScores {
            scores: order.iter().map(|n| n.id.clone()).zip(r.scores).collect(),
            iterations: r.iterations,
            converged: r.converged,
        })
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges().collect(),
            sources: self.sources.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        let mut g = Self {
            sources: file.sources,
            ..Self::default()
        };
        for n in file.nodes {
            let n_id = n
                .id
                .strip_prefix('e')
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| GraphError::Format(format!("node id `{}` is not of the form e<N>", n.id)))?;
            g.next_id = g.next_id.max(n_id + 1);
            if g.ids.insert(n.id.clone(), n.norm_key.clone()).is_some() {
                return Err(GraphError::Format(format!("duplicate node id `{}`", n.id)));
            }
            if g.nodes.insert(n.norm_key.clone(), n).is_some() {
                return Err(GraphError::Format("duplicate norm_key".into()));
            }
        }
        for e in file.edges {
            if e.src == e.dst || !g.ids.contains_key(&e.src) || !g.ids.contains_key(&e.dst) {
                return Err(GraphError::Format(format!("edge {}->{} has bad endpoints", e.src, e.dst)));
            }
            g.edges.entry((e.src, e.dst, e.label)).or_default().extend(e.provenance);
        }
        Ok(g)
    }
}

/// One extraction call; errors are rendered to a warning string.
pub(crate) fn extract(gateway: &Gateway, text: &str) -> Result<Extraction, String> {
    let resp = gateway
        .call(TemplateName::EntityExtract, vars([("text", text)]))
        .map_err(|e| format!("extraction failed: {e}"))?;
    parse_extraction(&resp.text).map_err(|e| format!("extraction unparseable: {e}"))
}
