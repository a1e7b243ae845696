//! Semantic conflict detection and resolution for intent specifications.
//!
//! An intent specification is an ordered list of natural-language chunks
//! (rules, preferences, design details) that grounds an agent's behavior.
//! Integrating a new piece of information into it is a *semantic commit*:
//! the engine retrieves the chunks the change could affect through a
//! knowledge graph ranked with personalized PageRank, classifies each one
//! against the new information with a language model, and drives a
//! reviewable, revertible resolution workflow over the results.
//!
//! Modules:
//!
//! - [`store`]: chunks, their review-state machine, snapshots and the event log.
//! - [`graph`]: entity/relation graph induction, PageRank, candidate retrieval.
//! - [`llm`]: prompt catalog, providers (live, scripted) and response parsers.
//! - [`engine`]: check-for-conflicts, make-change and the local resolution aids.
//! - [`bench`]: benchmark datasets, baselines, metrics and the FPR experiment.

pub mod bench;
pub mod engine;
pub mod graph;
pub mod llm;
pub mod parallel;
pub mod store;
mod verdict;

pub use engine::{Action, ChangeRequest, DetectionReport, EngineConfig, EngineError};
pub use graph::{KnowledgeGraph, PprConfig};
pub use llm::{Gateway, GatewayError};
pub use parallel::Parallelism;
pub use store::{Chunk, ChunkId, ChunkState, IntentSpec, StoreError};
pub use verdict::{ConflictClass, ConflictVerdict};
