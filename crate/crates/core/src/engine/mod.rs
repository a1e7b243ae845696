//! Detection and resolution flows over an [`IntentSpec`].
//!
//! [`check_for_conflicts`] retrieves candidates, classifies each against the
//! new information and flags the conflicting ones without touching any text.
//! [`make_change`] does the same and then asks for a rewrite of the flagged
//! chunks, turning the answer into reviewable proposals.

mod aids;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::graph::{retrieve_candidates, Candidate, KnowledgeGraph, PprConfig};
use crate::llm::parse::{parse_conflict_json, parse_numbered_list, split_add_directive, RewriteItem};
use crate::llm::{vars, Gateway, GatewayError, TemplateName};
use crate::parallel::{self, Parallelism};
use crate::store::{ChunkEvent, ChunkId, IntentSpec, Origin, StoreError};
use crate::verdict::{ConflictClass, ConflictVerdict};

pub use aids::{local_rewrite, should_request_clarification, suggest_strategies, underline_words, LocalRewrite};

/// Reason attached when the classifier answer could not be parsed.
pub const UNPARSEABLE_REASON: &str = "unparseable classifier output";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Add,
    Change,
    Edit,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Add => "add",
            Action::Change => "change",
            Action::Edit => "edit",
        }
    }

    /// Phrase bound as `{action_instructions}` in the global rewrite.
    pub fn rewrite_instructions(self) -> &'static str {
        match self {
            Action::Add => "to add to",
            Action::Change | Action::Edit => "to integrate into",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "add" => Ok(Action::Add),
            "change" => Ok(Action::Change),
            "edit" => Ok(Action::Edit),
            other => Err(format!("unknown action `{other}` (expected add, change or edit)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRequest {
    pub action: Action,
    pub new_info: String,
    #[serde(default)]
    pub target: Option<ChunkId>,
    #[serde(default)]
    pub steer: Option<String>,
    #[serde(default)]
    pub clarification: Option<String>,
}

impl ChangeRequest {
    pub fn new(action: Action, new_info: impl Into<String>) -> Self {
        Self {
            action,
            new_info: new_info.into(),
            target: None,
            steer: None,
            clarification: None,
        }
    }

    pub fn edit(target: ChunkId, new_info: impl Into<String>) -> Self {
        Self {
            target: Some(target),
            ..Self::new(Action::Edit, new_info)
        }
    }

    pub fn with_steer(mut self, steer: impl Into<String>) -> Self {
        self.steer = Some(steer.into());
        self
    }

    pub fn with_clarification(mut self, answer: impl Into<String>) -> Self {
        self.clarification = Some(answer.into());
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.new_info.trim().is_empty() {
            return Err(EngineError::InvalidRequest("new_info must not be empty".into()));
        }
        match (self.action, &self.target) {
            (Action::Edit, None) => Err(EngineError::InvalidRequest("an edit requires a target chunk".into())),
            (Action::Add | Action::Change, Some(_)) => Err(EngineError::InvalidRequest(format!(
                "a target is only allowed for edits, not `{}`",
                self.action
            ))),
            _ => Ok(()),
        }
    }

    /// New information with steering and clarification appended; this is
    /// the text used for retrieval, classification and rewriting.
    pub fn effective_new_info(&self) -> String {
        let mut text = self.new_info.clone();
        for (label, extra) in [("Guidance", &self.steer), ("Clarification", &self.clarification)] {
            if let Some(extra) = extra.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
                text.push_str(&format!("\n{label}: {extra}"));
            }
        }
        text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub ppr: PprConfig,
    pub parallelism: Parallelism,
    /// Extra attempts when the global rewrite returns the wrong item count.
    pub rewrite_retries: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            ppr: PprConfig::default(),
            parallelism: Parallelism::default(),
            rewrite_retries: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("chunk `{0}` is not flagged")]
    NotFlagged(ChunkId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flag {
    pub chunk_id: ChunkId,
    pub class: ConflictClass,
    pub reasoning: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectionReport {
    /// Conflicting candidates in ordinal order.
    pub flags: Vec<Flag>,
    pub warnings: Vec<String>,
    pub latency_ms: f64,
    pub retrieval_latency_ms: f64,
    pub classification_latency_ms: f64,
    pub candidates: Vec<Candidate>,
    /// Every classified candidate, conflicting or not.
    pub verdicts: BTreeMap<ChunkId, ConflictVerdict>,
    pub seeds: Vec<String>,
    pub fallback: bool,
    pub classifier_calls: usize,
    /// Candidates whose classifier call failed outright (coerced to
    /// ambiguous).
    pub provider_failures: usize,
}

impl DetectionReport {
    pub fn direct_count(&self) -> usize {
        self.flags.iter().filter(|f| f.class == ConflictClass::Direct).count()
    }

    pub fn flagged_ids(&self) -> impl Iterator<Item = &ChunkId> {
        self.flags.iter().map(|f| &f.chunk_id)
    }
}

/// One classifier call and how it went.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub verdict: ConflictVerdict,
    pub latency_ms: f64,
    pub warning: Option<String>,
    pub provider_failed: bool,
}

/// Classifies one existing chunk against the new information. Failures are
/// coerced to an ambiguous verdict and described in `warning`.
pub fn classify_pair(gateway: &Gateway, existing: &str, new_info: &str) -> PairOutcome {
    let started = Instant::now();
    let result = gateway.call(
        TemplateName::ConflictClassify,
        vars([("existing_info", existing), ("new_info", new_info)]),
    );
    let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
    match result {
        Ok(resp) => match parse_conflict_json(&resp.text) {
            Ok(verdict) => PairOutcome {
                verdict,
                latency_ms: resp.latency_ms,
                warning: None,
                provider_failed: false,
            },
            Err(e) => PairOutcome {
                verdict: ConflictVerdict::ambiguous(UNPARSEABLE_REASON),
                latency_ms: resp.latency_ms,
                warning: Some(format!("{UNPARSEABLE_REASON} ({e}); treated as ambiguous")),
                provider_failed: false,
            },
        },
        Err(e) => PairOutcome {
            verdict: ConflictVerdict::ambiguous(format!("classifier call failed: {e}")),
            latency_ms,
            warning: Some(format!("classifier call failed ({e}); treated as ambiguous")),
            provider_failed: true,
        },
    }
}

/// Classifies `texts` pairwise against `new_info`, fanned out under `mode`.
/// Output order matches input order.
pub fn classify_all(texts: &[&str], new_info: &str, gateway: &Gateway, mode: Parallelism) -> Vec<PairOutcome> {
    parallel::map(texts, mode, |t| classify_pair(gateway, t, new_info))
}

fn numbered(texts: &[&str]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Impact analysis: flags conflicting candidates, never edits text.
///
/// Candidates with a pending proposal are left alone. A candidate that is
/// already flagged gets its flag replaced when the new verdict is a
/// conflict and is kept as is otherwise.
pub fn check_for_conflicts(
    spec: &mut IntentSpec,
    graph: &KnowledgeGraph,
    request: &ChangeRequest,
    gateway: &Gateway,
    cfg: &EngineConfig,
) -> Result<DetectionReport, EngineError> {
    let started = Instant::now();
    request.validate()?;
    if let Some(t) = &request.target {
        spec.chunk(t)?;
    }
    let retrieval = retrieve_candidates(graph, spec, request, gateway, &cfg.ppr);
    let mut report = DetectionReport {
        warnings: retrieval.warnings,
        retrieval_latency_ms: retrieval.latency_ms,
        seeds: retrieval.seeds,
        fallback: retrieval.fallback,
        ..Default::default()
    };

    let mut work: Vec<(&Candidate, String)> = Vec::new();
    for c in &retrieval.candidates {
        let chunk = spec.chunk(&c.chunk_id)?;
        if chunk.state().is_proposed() {
            report
                .warnings
                .push(format!("chunk {} has a pending proposal and was not re-checked", c.chunk_id));
            continue;
        }
        work.push((c, chunk.text().to_string()));
    }
    let new_info = request.effective_new_info();
    let texts: Vec<&str> = work.iter().map(|(_, t)| t.as_str()).collect();
    let classify_started = Instant::now();
    let outcomes = classify_all(&texts, &new_info, gateway, cfg.parallelism);
    report.classification_latency_ms = classify_started.elapsed().as_secs_f64() * 1000.0;
    report.classifier_calls = outcomes.len();

    let mut results: Vec<(usize, &Candidate, PairOutcome)> = work
        .iter()
        .zip(outcomes)
        .map(|((c, _), o)| (spec.chunk(&c.chunk_id).map(|ch| ch.ordinal()).unwrap_or(c.ordinal), *c, o))
        .collect();
    results.sort_by_key(|(ordinal, _, _)| *ordinal);

    for (_, cand, outcome) in results {
        if let Some(w) = &outcome.warning {
            report.warnings.push(format!("chunk {}: {w}", cand.chunk_id));
        }
        report.provider_failures += usize::from(outcome.provider_failed);
        let verdict = outcome.verdict;
        if let Some(event) = ChunkEvent::flag(&verdict) {
            if spec.chunk(&cand.chunk_id)?.state().is_flagged() {
                spec.transition(&cand.chunk_id, ChunkEvent::Clear)?;
            }
            spec.transition(&cand.chunk_id, event)?;
            report.flags.push(Flag {
                chunk_id: cand.chunk_id.clone(),
                class: verdict.class,
                reasoning: verdict.reasoning.clone(),
                score: cand.score,
            });
        }
        report.verdicts.insert(cand.chunk_id.clone(), verdict);
    }
    report.candidates = retrieval.candidates;
    report.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
    info!(
        flags = report.flags.len(),
        candidates = report.candidates.len(),
        latency_ms = report.latency_ms,
        "conflict check finished"
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Edit,
    Delete,
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Proposal {
    pub chunk_id: ChunkId,
    pub kind: ProposalKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeOutcome {
    pub report: DetectionReport,
    pub proposals: Vec<Proposal>,
    /// Flagged chunks the rewrite left unchanged.
    pub kept: Vec<ChunkId>,
    /// Set when the rewrite could not be produced; detection results stand.
    pub rewrite_error: Option<String>,
    /// Snapshot taken before anything changed.
    pub snapshot_revision: u64,
}

/// Detection followed by a global rewrite of the flagged chunks.
///
/// `add` always appends the new information as a pending chunk; `change`
/// appends one only when the rewrite emits an `ADD:` line. Unflagged chunks
/// are never touched.
pub fn make_change(
    spec: &mut IntentSpec,
    graph: &KnowledgeGraph,
    request: &ChangeRequest,
    gateway: &Gateway,
    cfg: &EngineConfig,
) -> Result<ChangeOutcome, EngineError> {
    request.validate()?;
    let k = spec
        .snapshots()
        .iter()
        .filter(|s| s.label.as_deref().is_some_and(|l| l.starts_with("before make-change #")))
        .count()
        + 1;
    let snapshot_revision = spec.snapshot(Some(format!("before make-change #{k}")));
    let report = check_for_conflicts(spec, graph, request, gateway, cfg)?;
    let mut outcome = ChangeOutcome {
        report,
        proposals: Vec::new(),
        kept: Vec::new(),
        rewrite_error: None,
        snapshot_revision,
    };

    let flagged: Vec<(ChunkId, String)> = outcome
        .report
        .flags
        .iter()
        .filter_map(|f| spec.get(&f.chunk_id))
        .filter(|c| c.state().is_flagged())
        .map(|c| (c.id().clone(), c.text().to_string()))
        .collect();

    let mut added_text = None;
    if !flagged.is_empty() {
        match global_rewrite(gateway, request, &flagged, cfg.rewrite_retries) {
            Ok((items, add)) => {
                for ((id, old), item) in flagged.iter().zip(items) {
                    match item {
                        RewriteItem::Delete => {
                            spec.transition(id, ChunkEvent::ProposeDelete { origin: Origin::Ai })?;
                            outcome.proposals.push(Proposal {
                                chunk_id: id.clone(),
                                kind: ProposalKind::Delete,
                                text: String::new(),
                            });
                        }
                        RewriteItem::Text(t) if t.trim() == old.trim() => outcome.kept.push(id.clone()),
                        RewriteItem::Text(t) => {
                            spec.transition(
                                id,
                                ChunkEvent::ProposeEdit {
                                    text: t.clone(),
                                    origin: Origin::Ai,
                                },
                            )?;
                            outcome.proposals.push(Proposal {
                                chunk_id: id.clone(),
                                kind: ProposalKind::Edit,
                                text: t,
                            });
                        }
                    }
                }
                if request.action == Action::Change {
                    added_text = add;
                }
            }
            Err(e) => {
                warn!(error = %e, "global rewrite abandoned");
                outcome.report.warnings.push(format!("rewrite abandoned: {e}"));
                outcome.rewrite_error = Some(e);
            }
        }
    }
    if request.action == Action::Add {
        added_text = Some(request.new_info.clone());
    }
    if let Some(text) = added_text {
        let id = spec.propose_add(text.clone(), Origin::Ai);
        outcome.proposals.push(Proposal {
            chunk_id: id,
            kind: ProposalKind::Add,
            text,
        });
    }
    Ok(outcome)
}

fn global_rewrite(
    gateway: &Gateway,
    request: &ChangeRequest,
    flagged: &[(ChunkId, String)],
    retries: u32,
) -> Result<(Vec<RewriteItem>, Option<String>), String> {
    let texts: Vec<&str> = flagged.iter().map(|(_, t)| t.as_str()).collect();
    let extension = match request.action {
        Action::Change => gateway.catalog().rewrite_change_extension().to_string(),
        Action::Add | Action::Edit => String::new(),
    };
    let v = vars([
        ("action_instructions", request.action.rewrite_instructions().to_string()),
        ("newInfo", request.effective_new_info()),
        ("all_docs", numbered(&texts)),
        ("extension", extension),
    ]);
    let mut last = String::new();
    for attempt in 0..=retries {
        let resp = gateway
            .call(TemplateName::GlobalRewrite, v.clone())
            .map_err(|e| format!("rewrite call failed: {e}"))?;
        let (list, add) = split_add_directive(&resp.text);
        match parse_numbered_list(&list, texts.len()) {
            Ok(items) => return Ok((items, add)),
            Err(e) => {
                warn!(attempt = attempt + 1, error = %e, "rewrite list unusable");
                last = e.to_string();
            }
        }
    }
    Err(last)
}
