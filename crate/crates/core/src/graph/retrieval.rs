use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;
use tracing::debug;

use super::{extract, normalize, KnowledgeGraph, PprConfig};
use crate::engine::ChangeRequest;
use crate::llm::Gateway;
use crate::store::{ChunkId, ChunkState, IntentSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub chunk_id: ChunkId,
    pub ordinal: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Retrieval {
    /// Descending by score, ties by ascending ordinal.
    pub candidates: Vec<Candidate>,
    /// norm_keys of matched seed nodes.
    pub seeds: Vec<String>,
    /// Every eligible chunk was returned with a uniform score.
    pub fallback: bool,
    /// False when PageRank hit its iteration cap before the tolerance.
    pub converged: bool,
    pub warnings: Vec<String>,
    pub latency_ms: f64,
}

/// `needle` occurs in `hay` delimited by non-alphanumerics or string ends.
pub(crate) fn contains_whole_word(hay: &str, needle: &str) -> bool {
    !needle.is_empty() && whole_word_matches(hay, needle).next().is_some()
}

/// Byte offsets of whole-word occurrences of `needle` in `hay`.
pub(crate) fn whole_word_matches<'a>(hay: &'a str, needle: &'a str) -> impl Iterator<Item = usize> + 'a {
    hay.match_indices(needle).map(|(i, _)| i).filter(move |&i| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + needle.len()..].chars().next();
        !needle.is_empty()
            && !before.is_some_and(char::is_alphanumeric)
            && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Ranks the chunks `request` is likely to affect.
///
/// Seed entities are extracted from the request text and matched to nodes
/// by exact norm_key, then by whole-word containment in either direction.
/// Each chunk scores the sum of the PageRank scores of the entities it
/// mentions; the top `cfg.top_k` chunks with positive score are returned.
/// When extraction fails or nothing matches, every chunk is returned with
/// score `1/len`. An edit's target chunk is never a candidate.
pub fn retrieve_candidates(
    graph: &KnowledgeGraph,
    spec: &IntentSpec,
    request: &ChangeRequest,
    gateway: &Gateway,
    cfg: &PprConfig,
) -> Retrieval {
    let started = Instant::now();
    let eligible: Vec<(&ChunkId, usize)> = spec
        .chunks()
        .iter()
        .filter(|c| c.state() != ChunkState::ProposedAdd && Some(c.id()) != request.target.as_ref())
        .map(|c| (c.id(), c.ordinal()))
        .collect();
    let mut out = Retrieval::default();

    let query = request.effective_new_info();
    let seeds = match extract(gateway, &query) {
        Ok(x) => {
            let mut keys: Vec<String> = x.all_entities().into_iter().map(normalize).filter(|k| !k.is_empty()).collect();
            if keys.is_empty() {
                keys.push(normalize(&query));
            }
            match_seeds(graph, &keys)
        }
        Err(msg) => {
            out.warnings.push(format!("seed {msg}; returning all chunks"));
            BTreeSet::new()
        }
    };

    let ranked = if seeds.is_empty() {
        None
    } else {
        match graph.personalized_pagerank(&seeds, cfg) {
            Ok(r) => {
                if !r.converged {
                    debug!(iterations = r.iterations, "PageRank stopped at its iteration cap");
                }
                out.converged = r.converged;
                Some(r)
            }
            Err(e) => {
                out.warnings.push(format!("PageRank failed: {e}; returning all chunks"));
                None
            }
        }
    };

    match ranked {
        Some(r) => {
            out.seeds = seeds.iter().filter_map(|id| graph.node(id)).map(|n| n.norm_key.clone()).collect();
            out.seeds.sort();
            let mut scored: Vec<Candidate> = eligible
                .iter()
                .map(|&(id, ordinal)| Candidate {
                    chunk_id: id.clone(),
                    ordinal,
                    score: graph.entities_of(id).map(|n| r.scores[&n.id]).sum(),
                })
                .filter(|c| c.score > 0.0)
                .collect();
            scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.ordinal.cmp(&b.ordinal)));
            scored.truncate(cfg.top_k);
            out.candidates = scored;
        }
        None => {
            if out.warnings.is_empty() {
                out.warnings.push("no seed entity matched the graph; returning all chunks".into());
            }
            out.fallback = true;
            let uniform = 1.0 / eligible.len().max(1) as f64;
            out.candidates = eligible
                .iter()
                .map(|&(id, ordinal)| Candidate {
                    chunk_id: id.clone(),
                    ordinal,
                    score: uniform,
                })
                .collect();
        }
    }
    out.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
    out
}

fn match_seeds(graph: &KnowledgeGraph, keys: &[String]) -> BTreeSet<String> {
    let mut seeds = BTreeSet::new();
    for key in keys {
        if let Some(n) = graph.node_by_key(key) {
            seeds.insert(n.id.clone());
            continue;
        }
        for n in graph.nodes() {
            if contains_whole_word(key, &n.norm_key) || contains_whole_word(&n.norm_key, key) {
                seeds.insert(n.id.clone());
            }
        }
    }
    seeds
}
