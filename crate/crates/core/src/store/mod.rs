//! The intent specification: ordered chunks, their review state, and a
//! linear history of snapshots plus an append-only event log.
//!
//! Every mutation goes through [`IntentSpec`] and is recorded as a
//! [`StoreEvent`]; [`IntentSpec::replay`] rebuilds the current spec from the
//! first snapshot and that log.

mod format;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verdict::{ConflictClass, ConflictVerdict};

pub use format::{SourceFormat, SPEC_JSON_VERSION};

/// Opaque chunk identifier. Never reused within a session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(String);

impl ChunkId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ChunkId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkState {
    Neutral,
    DirectConflict,
    AmbiguousConflict,
    ProposedEdit,
    ProposedAdd,
    ProposedDelete,
}

impl ChunkState {
    pub const ALL: [ChunkState; 6] = [
        ChunkState::Neutral,
        ChunkState::DirectConflict,
        ChunkState::AmbiguousConflict,
        ChunkState::ProposedEdit,
        ChunkState::ProposedAdd,
        ChunkState::ProposedDelete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChunkState::Neutral => "neutral",
            ChunkState::DirectConflict => "direct_conflict",
            ChunkState::AmbiguousConflict => "ambiguous_conflict",
            ChunkState::ProposedEdit => "proposed_edit",
            ChunkState::ProposedAdd => "proposed_add",
            ChunkState::ProposedDelete => "proposed_delete",
        }
    }

    pub fn is_flagged(self) -> bool {
        matches!(self, ChunkState::DirectConflict | ChunkState::AmbiguousConflict)
    }

    pub fn is_proposed(self) -> bool {
        matches!(
            self,
            ChunkState::ProposedEdit | ChunkState::ProposedAdd | ChunkState::ProposedDelete
        )
    }
}

impl fmt::Display for ChunkState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who authored the most recent proposal on a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    User,
    Ai,
}

/// Half-open byte range `[start, end)` into a chunk's committed text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

/// Review state in effect before a proposal was made; restored on revert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PriorReview {
    state: ChunkState,
    verdict: Option<ConflictVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    id: ChunkId,
    ordinal: usize,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proposed_text: Option<String>,
    state: ChunkState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verdict: Option<ConflictVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    underlined_spans: Vec<Span>,
    #[serde(default)]
    origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<PriorReview>,
}

impl Chunk {
    fn neutral(id: ChunkId, ordinal: usize, text: String) -> Self {
        Self {
            id,
            ordinal,
            text,
            proposed_text: None,
            state: ChunkState::Neutral,
            verdict: None,
            underlined_spans: Vec::new(),
            origin: Origin::User,
            prior: None,
        }
    }

    pub fn id(&self) -> &ChunkId {
        &self.id
    }

    pub fn ordinal(&self) -> usize {
        self.ordinal
    }

    /// Committed text. Pending proposals never show up here.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn proposed_text(&self) -> Option<&str> {
        self.proposed_text.as_deref()
    }

    pub fn state(&self) -> ChunkState {
        self.state
    }

    pub fn verdict(&self) -> Option<&ConflictVerdict> {
        self.verdict.as_ref()
    }

    pub fn underlined_spans(&self) -> &[Span] {
        &self.underlined_spans
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Checks the per-chunk invariants. Used by tests and after loading
    /// review sidecars.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.state.is_proposed() != self.proposed_text.is_some() {
            return Err(format!(
                "chunk {}: proposed_text presence does not match state {}",
                self.id, self.state
            ));
        }
        if self.state == ChunkState::ProposedDelete && self.proposed_text.as_deref() != Some("") {
            return Err(format!("chunk {}: proposed_delete must carry the empty marker", self.id));
        }
        let wants_verdict = self.state != ChunkState::Neutral;
        if wants_verdict != self.verdict.is_some() {
            return Err(format!(
                "chunk {}: verdict presence does not match state {}",
                self.id, self.state
            ));
        }
        if let Some(v) = &self.verdict {
            if v.class.is_conflict() && v.reasoning.trim().is_empty() {
                return Err(format!("chunk {}: conflict verdict without reasoning", self.id));
            }
        }
        validate_spans(&self.text, &self.underlined_spans)
            .map_err(|e| format!("chunk {}: {e}", self.id))
    }
}

fn validate_spans(text: &str, spans: &[Span]) -> Result<(), StoreError> {
    let mut last_end = 0;
    for (i, s) in spans.iter().enumerate() {
        let ok = s.start < s.end
            && s.end <= text.len()
            && (i == 0 || s.start >= last_end)
            && text.is_char_boundary(s.start)
            && text.is_char_boundary(s.end);
        if !ok {
            return Err(StoreError::InvalidSpan {
                start: s.start,
                end: s.end,
                len: text.len(),
            });
        }
        last_end = s.end;
    }
    Ok(())
}

/// Per-chunk review events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChunkEvent {
    FlagDirect { reasoning: String },
    FlagAmbiguous { reasoning: String },
    ProposeEdit { text: String, origin: Origin },
    ProposeDelete { origin: Origin },
    /// Accept: commits the proposal, deletes for `proposed_delete`, or marks
    /// a flagged chunk reviewed.
    Resolve,
    /// Drops a pending proposal and returns to the state before it.
    Revert,
    /// Drops a flag.
    Clear,
}

impl ChunkEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ChunkEvent::FlagDirect { .. } => "flag_direct",
            ChunkEvent::FlagAmbiguous { .. } => "flag_ambiguous",
            ChunkEvent::ProposeEdit { .. } => "propose_edit",
            ChunkEvent::ProposeDelete { .. } => "propose_delete",
            ChunkEvent::Resolve => "resolve",
            ChunkEvent::Revert => "revert",
            ChunkEvent::Clear => "clear",
        }
    }

    pub fn flag(verdict: &ConflictVerdict) -> Option<Self> {
        match verdict.class {
            ConflictClass::Direct => Some(ChunkEvent::FlagDirect {
                reasoning: verdict.reasoning.clone(),
            }),
            ConflictClass::Ambiguous => Some(ChunkEvent::FlagAmbiguous {
                reasoning: verdict.reasoning.clone(),
            }),
            ConflictClass::None => None,
        }
    }
}

/// Entry of the store's append-only log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StoreEvent {
    Transition { chunk: ChunkId, event: ChunkEvent },
    /// A committed chunk added directly by the user.
    Insert { chunk: ChunkId, text: String },
    /// A chunk added as a pending proposal.
    ProposeAdd { chunk: ChunkId, text: String, origin: Origin },
    Underline { chunk: ChunkId, spans: Vec<Span> },
    RevertAll,
    ClearAll,
    Snapshot { label: Option<String> },
    Restore { revision: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecSnapshot {
    pub revision: u64,
    pub chunks: Vec<Chunk>,
    pub label: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown chunk `{0}`")]
    NotFound(ChunkId),
    #[error("illegal transition: `{event}` is not allowed from state `{state}`")]
    IllegalTransition { state: ChunkState, event: &'static str },
    #[error("unknown revision {0}")]
    UnknownRevision(u64),
    #[error("format error at `{field}`: {message}")]
    Format { field: String, message: String },
    #[error("span {start}..{end} is invalid for text of length {len}")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("duplicate chunk id `{0}`")]
    DuplicateId(ChunkId),
}

/// The intent specification being edited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    chunks: Vec<Chunk>,
    next_id: u64,
    initial_next_id: u64,
    snapshots: Vec<SpecSnapshot>,
    log: Vec<StoreEvent>,
}

impl IntentSpec {
    /// Builds a spec with ids `c0`, `c1`, ... from plain texts.
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let chunks = texts.into_iter().enumerate().map(|(i, t)| Chunk::neutral(ChunkId(format!("c{i}")), i, t.into()));
        Self::with_chunks(chunks.collect())
    }

    /// Builds a spec from `(id, text)` pairs, all neutral, and records
    /// snapshot 0.
    pub fn from_chunks<I>(chunks: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = (ChunkId, String)>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (ordinal, (id, text)) in chunks.into_iter().enumerate() {
            if !seen.insert(id.clone()) {
                return Err(StoreError::DuplicateId(id));
            }
            out.push(Chunk::neutral(id, ordinal, text));
        }
        Ok(Self::with_chunks(out))
    }

    fn with_chunks(chunks: Vec<Chunk>) -> Self {
        let next_id = next_free_id(&chunks);
        let snapshot = SpecSnapshot {
            revision: 0,
            chunks: chunks.clone(),
            label: Some("loaded".to_string()),
        };
        Self {
            chunks,
            next_id,
            initial_next_id: next_id,
            snapshots: vec![snapshot],
            log: Vec::new(),
        }
    }

    pub fn load_spec(source: &[u8], format: SourceFormat) -> Result<Self, StoreError> {
        format::load(source, format)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.iter().find(|c| &c.id == id)
    }

    pub fn chunk(&self, id: &ChunkId) -> Result<&Chunk, StoreError> {
        self.get(id).ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    pub fn log(&self) -> &[StoreEvent] {
        &self.log
    }

    pub fn snapshots(&self) -> &[SpecSnapshot] {
        &self.snapshots
    }

    pub fn latest_revision(&self) -> u64 {
        self.snapshots.last().map(|s| s.revision).unwrap_or(0)
    }

    /// Committed texts in ordinal order.
    pub fn committed_texts(&self) -> Vec<&str> {
        self.chunks
            .iter()
            .filter(|c| c.state != ChunkState::ProposedAdd)
            .map(|c| c.text.as_str())
            .collect()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, c) in self.chunks.iter().enumerate() {
            if c.ordinal != i {
                return Err(format!("chunk {} has ordinal {} at position {i}", c.id, c.ordinal));
            }
            c.check_invariants()?;
        }
        let ids: BTreeSet<_> = self.chunks.iter().map(|c| &c.id).collect();
        if ids.len() != self.chunks.len() {
            return Err("duplicate chunk ids".to_string());
        }
        Ok(())
    }

    fn index_of(&self, id: &ChunkId) -> Result<usize, StoreError> {
        self.chunks
            .iter()
            .position(|c| &c.id == id)
            .ok_or_else(|| StoreError::NotFound(id.clone()))
    }

    fn fresh_id(&mut self) -> ChunkId {
        loop {
            let id = ChunkId(format!("c{}", self.next_id));
            self.next_id += 1;
            if self.get(&id).is_none() && !self.snapshot_mentions(&id) {
                return id;
            }
        }
    }

    fn snapshot_mentions(&self, id: &ChunkId) -> bool {
        self.snapshots
            .iter()
            .any(|s| s.chunks.iter().any(|c| &c.id == id))
    }

    fn densify(&mut self) {
        for (i, c) in self.chunks.iter_mut().enumerate() {
            c.ordinal = i;
        }
    }

    /// Applies one review event to a chunk.
    pub fn transition(&mut self, id: &ChunkId, event: ChunkEvent) -> Result<Option<&Chunk>, StoreError> {
        let idx = self.index_of(id)?;
        let removed = apply_transition(&mut self.chunks, idx, &event)?;
        if removed {
            self.densify();
        }
        self.log.push(StoreEvent::Transition {
            chunk: id.clone(),
            event,
        });
        Ok(if removed { None } else { Some(&self.chunks[idx]) })
    }

    /// Appends a committed neutral chunk (the "Add Info" action).
    pub fn add_chunk(&mut self, text: impl Into<String>) -> ChunkId {
        let id = self.fresh_id();
        let text = text.into();
        self.push_chunk(Chunk::neutral(id.clone(), 0, text.clone()));
        self.log.push(StoreEvent::Insert { chunk: id.clone(), text });
        id
    }

    /// Appends a chunk in `proposed_add`; nothing is committed until resolved.
    pub fn propose_add(&mut self, text: impl Into<String>, origin: Origin) -> ChunkId {
        let id = self.fresh_id();
        let text = text.into();
        self.push_chunk(proposed_add_chunk(id.clone(), text.clone(), origin));
        self.log.push(StoreEvent::ProposeAdd {
            chunk: id.clone(),
            text,
            origin,
        });
        id
    }

    fn push_chunk(&mut self, mut chunk: Chunk) {
        chunk.ordinal = self.chunks.len();
        self.chunks.push(chunk);
    }

    /// Replaces a chunk's underline decorations.
    pub fn set_underlines(&mut self, id: &ChunkId, spans: Vec<Span>) -> Result<(), StoreError> {
        let idx = self.index_of(id)?;
        validate_spans(&self.chunks[idx].text, &spans)?;
        self.chunks[idx].underlined_spans = spans.clone();
        self.log.push(StoreEvent::Underline {
            chunk: id.clone(),
            spans,
        });
        Ok(())
    }

    /// Drops every pending proposal back to its pre-proposal state.
    pub fn revert_all(&mut self) -> &[Chunk] {
        revert_all_in(&mut self.chunks);
        self.densify();
        self.log.push(StoreEvent::RevertAll);
        &self.chunks
    }

    /// Returns every flagged chunk to neutral. Texts are untouched.
    pub fn clear_all_conflicts(&mut self) -> &[Chunk] {
        clear_all_in(&mut self.chunks);
        self.log.push(StoreEvent::ClearAll);
        &self.chunks
    }

    pub fn snapshot(&mut self, label: Option<String>) -> u64 {
        let revision = self.record_snapshot(label.clone());
        self.log.push(StoreEvent::Snapshot { label });
        revision
    }

    fn record_snapshot(&mut self, label: Option<String>) -> u64 {
        let revision = self.latest_revision() + 1;
        self.snapshots.push(SpecSnapshot {
            revision,
            chunks: self.chunks.clone(),
            label,
        });
        revision
    }

    /// Makes the chunk list identical to snapshot `revision` and records the
    /// result as a new snapshot.
    pub fn restore(&mut self, revision: u64) -> Result<&[Chunk], StoreError> {
        let snap = self
            .snapshots
            .iter()
            .find(|s| s.revision == revision)
            .ok_or(StoreError::UnknownRevision(revision))?;
        self.chunks = snap.chunks.clone();
        self.record_snapshot(Some(format!("restore of revision {revision}")));
        self.log.push(StoreEvent::Restore { revision });
        Ok(&self.chunks)
    }

    /// Rebuilds a spec by replaying this spec's log from snapshot 0.
    pub fn replay_from_start(&self) -> Result<IntentSpec, StoreError> {
        Self::replay(&self.snapshots[0].chunks, self.initial_next_id, &self.log)
    }

    pub fn replay(initial: &[Chunk], initial_next_id: u64, log: &[StoreEvent]) -> Result<IntentSpec, StoreError> {
        let mut spec = IntentSpec::with_chunks(initial.to_vec());
        spec.next_id = initial_next_id;
        spec.initial_next_id = initial_next_id;
        for event in log {
            spec.apply_logged(event)?;
        }
        Ok(spec)
    }

    fn apply_logged(&mut self, event: &StoreEvent) -> Result<(), StoreError> {
        match event {
            StoreEvent::Transition { chunk, event } => {
                self.transition(chunk, event.clone())?;
            }
            StoreEvent::Insert { chunk, text } => {
                self.bump_next_id(chunk);
                self.push_chunk(Chunk::neutral(chunk.clone(), 0, text.clone()));
                self.log.push(event.clone());
            }
            StoreEvent::ProposeAdd { chunk, text, origin } => {
                self.bump_next_id(chunk);
                self.push_chunk(proposed_add_chunk(chunk.clone(), text.clone(), *origin));
                self.log.push(event.clone());
            }
            StoreEvent::Underline { chunk, spans } => self.set_underlines(chunk, spans.clone())?,
            StoreEvent::RevertAll => {
                self.revert_all();
            }
            StoreEvent::ClearAll => {
                self.clear_all_conflicts();
            }
            StoreEvent::Snapshot { label } => {
                self.snapshot(label.clone());
            }
            StoreEvent::Restore { revision } => {
                self.restore(*revision)?;
            }
        }
        Ok(())
    }

    fn bump_next_id(&mut self, id: &ChunkId) {
        if let Some(n) = numeric_suffix(id) {
            self.next_id = self.next_id.max(n + 1);
        }
    }

    /// Parses a full review-state document (every chunk field, including
    /// pending proposals and verdicts). Snapshot 0 is the restored state.
    pub fn from_review_json(source: &[u8]) -> Result<Self, StoreError> {
        format::load_review(source)
    }

    pub fn to_review_json(&self) -> String {
        format::review_json(self)
    }

    /// `spec_json` v1 document of the current chunks.
    pub fn to_spec_json(&self) -> String {
        format::spec_json(self)
    }

    /// One `- ` line per chunk, committed text only.
    pub fn to_markdown(&self) -> String {
        format::markdown(self)
    }
}

fn proposed_add_chunk(id: ChunkId, text: String, origin: Origin) -> Chunk {
    Chunk {
        id,
        ordinal: 0,
        text: String::new(),
        proposed_text: Some(text),
        state: ChunkState::ProposedAdd,
        verdict: Some(ConflictVerdict::none()),
        underlined_spans: Vec::new(),
        origin,
        prior: None,
    }
}

fn numeric_suffix(id: &ChunkId) -> Option<u64> {
    id.0.strip_prefix('c').and_then(|n| n.parse().ok())
}

fn next_free_id(chunks: &[Chunk]) -> u64 {
    chunks
        .iter()
        .filter_map(|c| numeric_suffix(&c.id))
        .map(|n| n + 1)
        .max()
        .unwrap_or(0)
        .max(chunks.len() as u64)
}

/// Applies `event` to `chunks[idx]`. Returns `true` when the chunk was removed.
fn apply_transition(chunks: &mut Vec<Chunk>, idx: usize, event: &ChunkEvent) -> Result<bool, StoreError> {
    let chunk = &mut chunks[idx];
    let state = chunk.state;
    let illegal = || StoreError::IllegalTransition {
        state,
        event: event.name(),
    };
    match event {
        ChunkEvent::FlagDirect { reasoning } | ChunkEvent::FlagAmbiguous { reasoning } => {
            if state != ChunkState::Neutral {
                return Err(illegal());
            }
            let (next, verdict) = match event {
                ChunkEvent::FlagDirect { .. } => (ChunkState::DirectConflict, ConflictVerdict::direct(reasoning.clone())),
                _ => (ChunkState::AmbiguousConflict, ConflictVerdict::ambiguous(reasoning.clone())),
            };
            chunk.state = next;
            chunk.verdict = Some(verdict);
        }
        ChunkEvent::ProposeEdit { text, origin } => {
            if !(state == ChunkState::Neutral || state.is_flagged()) {
                return Err(illegal());
            }
            begin_proposal(chunk, ChunkState::ProposedEdit, text.clone(), *origin);
        }
        ChunkEvent::ProposeDelete { origin } => {
            if !(state == ChunkState::Neutral || state.is_flagged()) {
                return Err(illegal());
            }
            begin_proposal(chunk, ChunkState::ProposedDelete, String::new(), *origin);
        }
        ChunkEvent::Resolve => match state {
            ChunkState::Neutral => return Err(illegal()),
            ChunkState::ProposedDelete => {
                chunks.remove(idx);
                return Ok(true);
            }
            ChunkState::ProposedEdit | ChunkState::ProposedAdd => {
                let text = chunk.proposed_text.take().unwrap_or_default();
                if text != chunk.text {
                    chunk.underlined_spans.clear();
                }
                chunk.text = text;
                reset_neutral(chunk);
            }
            ChunkState::DirectConflict | ChunkState::AmbiguousConflict => reset_neutral(chunk),
        },
        ChunkEvent::Revert => {
            if !state.is_proposed() {
                return Err(illegal());
            }
            if state == ChunkState::ProposedAdd {
                chunks.remove(idx);
                return Ok(true);
            }
            revert_chunk(chunk);
        }
        ChunkEvent::Clear => {
            if !state.is_flagged() {
                return Err(illegal());
            }
            reset_neutral(chunk);
        }
    }
    Ok(false)
}

fn begin_proposal(chunk: &mut Chunk, state: ChunkState, proposed: String, origin: Origin) {
    chunk.prior = Some(PriorReview {
        state: chunk.state,
        verdict: chunk.verdict.clone(),
    });
    if chunk.verdict.is_none() {
        chunk.verdict = Some(ConflictVerdict::none());
    }
    chunk.state = state;
    chunk.proposed_text = Some(proposed);
    chunk.origin = origin;
}

fn revert_chunk(chunk: &mut Chunk) {
    let prior = chunk.prior.take().unwrap_or(PriorReview {
        state: ChunkState::Neutral,
        verdict: None,
    });
    chunk.state = prior.state;
    chunk.verdict = prior.verdict;
    chunk.proposed_text = None;
}

fn reset_neutral(chunk: &mut Chunk) {
    chunk.state = ChunkState::Neutral;
    chunk.verdict = None;
    chunk.proposed_text = None;
    chunk.prior = None;
    chunk.underlined_spans.clear();
}

fn revert_all_in(chunks: &mut Vec<Chunk>) {
    chunks.retain(|c| c.state != ChunkState::ProposedAdd);
    for c in chunks.iter_mut().filter(|c| c.state.is_proposed()) {
        revert_chunk(c);
    }
}

fn clear_all_in(chunks: &mut [Chunk]) {
    for c in chunks.iter_mut().filter(|c| c.state.is_flagged()) {
        reset_neutral(c);
    }
}
