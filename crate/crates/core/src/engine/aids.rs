//! Per-chunk resolution aids and the clarification router.

use serde::Serialize;
use tracing::warn;

use super::{numbered, ChangeRequest, EngineError};
use crate::graph::retrieval::whole_word_matches;
use crate::llm::parse::{clean_rewrite, parse_clarification, parse_strategies, parse_word_list};
use crate::llm::{vars, Gateway, TemplateName};
use crate::store::{Chunk, ChunkEvent, ChunkId, IntentSpec, Origin, Span};

pub const MAX_STRATEGIES: usize = 3;
pub const MAX_UNDERLINE_WORDS: usize = 5;

/// Asks whether `request` is broad enough to warrant a clarifying question.
/// Best effort: any failure means no question.
pub fn should_request_clarification(spec: &IntentSpec, request: &ChangeRequest, gateway: &Gateway) -> Option<String> {
    let v = vars([
        ("spec", numbered(&spec.committed_texts())),
        ("action", request.action.as_str().to_string()),
        ("new_info", request.new_info.clone()),
    ]);
    match gateway.call(TemplateName::ClarifyRouter, v) {
        Ok(resp) => parse_clarification(&resp.text),
        Err(e) => {
            warn!(error = %e, "clarification router failed");
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum LocalRewrite {
    Proposed { text: String },
    /// The model returned the original text; nothing changed.
    Unchanged,
}

/// Asks for a rewrite of one chunk and records it as an AI edit proposal.
pub fn local_rewrite(
    spec: &mut IntentSpec,
    chunk_id: &ChunkId,
    request: &ChangeRequest,
    steer: Option<&str>,
    gateway: &Gateway,
) -> Result<LocalRewrite, EngineError> {
    let chunk = spec.chunk(chunk_id)?;
    if chunk.state().is_proposed() {
        return Err(crate::store::StoreError::IllegalTransition {
            state: chunk.state(),
            event: "propose_edit",
        }
        .into());
    }
    let reasoning = chunk.verdict().map(|v| v.reasoning.clone()).unwrap_or_else(|| "(not flagged)".into());
    let v = vars([
        ("chunk", chunk.text().to_string()),
        ("new_info", request.effective_new_info()),
        ("reasoning", reasoning),
        ("steer", steer.map(str::trim).filter(|s| !s.is_empty()).unwrap_or("(none)").to_string()),
    ]);
    let original = chunk.text().to_string();
    let resp = gateway.call(TemplateName::LocalRewrite, v)?;
    let text = clean_rewrite(&resp.text);
    if text.is_empty() || text == original.trim() {
        return Ok(LocalRewrite::Unchanged);
    }
    spec.transition(
        chunk_id,
        ChunkEvent::ProposeEdit {
            text: text.clone(),
            origin: Origin::Ai,
        },
    )?;
    Ok(LocalRewrite::Proposed { text })
}

fn require_flagged(chunk: &Chunk) -> Result<(), EngineError> {
    if chunk.state().is_flagged() {
        Ok(())
    } else {
        Err(EngineError::NotFlagged(chunk.id().clone()))
    }
}

/// Up to three short resolution options. Failures yield an empty list.
pub fn suggest_strategies(chunk: &Chunk, request: &ChangeRequest, gateway: &Gateway) -> Result<Vec<String>, EngineError> {
    require_flagged(chunk)?;
    let v = vars([
        ("existing_info", chunk.text().to_string()),
        ("new_info", request.effective_new_info()),
    ]);
    Ok(match gateway.call(TemplateName::ResolutionStrategies, v) {
        Ok(resp) => {
            let mut s = parse_strategies(&resp.text);
            s.truncate(MAX_STRATEGIES);
            s
        }
        Err(e) => {
            warn!(error = %e, "strategy suggestion failed");
            Vec::new()
        }
    })
}

/// Byte spans of whole-word occurrences of `words` in `text`, merged so they
/// do not overlap. Falls back to an ASCII case-insensitive search for words
/// that do not occur verbatim.
pub fn locate_words(text: &str, words: &[String]) -> Vec<Span> {
    let lower = text.to_ascii_lowercase();
    let mut spans: Vec<Span> = Vec::new();
    for w in words {
        let mut hits: Vec<usize> = whole_word_matches(text, w).collect();
        if hits.is_empty() {
            hits = whole_word_matches(&lower, &w.to_ascii_lowercase()).collect();
        }
        spans.extend(hits.into_iter().map(|s| Span::new(s, s + w.len())));
    }
    spans.sort();
    let mut merged: Vec<Span> = Vec::new();
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.start < last.end => last.end = last.end.max(s.end),
            _ => merged.push(s),
        }
    }
    merged
}

/// Marks the words that drive a flagged chunk's conflict.
pub fn underline_words(
    spec: &mut IntentSpec,
    chunk_id: &ChunkId,
    request: &ChangeRequest,
    gateway: &Gateway,
) -> Result<Vec<Span>, EngineError> {
    let chunk = spec.chunk(chunk_id)?;
    require_flagged(chunk)?;
    let v = vars([
        ("existing_info", chunk.text().to_string()),
        ("new_info", request.effective_new_info()),
    ]);
    let words = match gateway.call(TemplateName::UnderlineWords, v) {
        Ok(resp) => {
            let mut w = parse_word_list(&resp.text);
            w.truncate(MAX_UNDERLINE_WORDS);
            w
        }
        Err(e) => {
            warn!(error = %e, "underline suggestion failed");
            Vec::new()
        }
    };
    let spans = locate_words(chunk.text(), &words);
    spec.set_underlines(chunk_id, spans.clone())?;
    Ok(spans)
}
