//! Benchmark datasets, baselines, metrics and the FPR experiment.

mod fpr;
mod methods;
mod metrics;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Action;
use crate::store::{ChunkId, IntentSpec};

pub use fpr::{injected_count, run_fpr_experiment, FprExperimentConfig, FprLevelResult, FprReport};
pub use methods::{comparison_markdown, run_method, BenchConfig, CaseResult, Method, MetricsReport};
pub use metrics::{compute_metrics, summarize, Aggregate, CaseMetrics, PositiveClass, Summary};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("benchmark schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("dataset `{name}` does not match its manifest: {message}")]
    Manifest { name: String, message: String },
    #[error("invalid experiment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchChunk {
    pub id: ChunkId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub id: String,
    pub action: Action,
    pub new_info: String,
    #[serde(default)]
    pub target: Option<ChunkId>,
    pub ground_truth: BTreeSet<ChunkId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub chunks: Vec<BenchChunk>,
    pub cases: Vec<BenchmarkCase>,
}

/// Expected shape of a published dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Manifest {
    pub name: &'static str,
    pub chunks: usize,
    pub cases: usize,
    pub min_conflicts: usize,
    pub median_conflicts: usize,
    pub max_conflicts: usize,
}

pub const KNOWN_MANIFESTS: [Manifest; 4] = [
    Manifest {
        name: "labyrinth",
        chunks: 35,
        cases: 17,
        min_conflicts: 0,
        median_conflicts: 4,
        max_conflicts: 10,
    },
    Manifest {
        name: "mars",
        chunks: 30,
        cases: 25,
        min_conflicts: 0,
        median_conflicts: 2,
        max_conflicts: 14,
    },
    Manifest {
        name: "finmem",
        chunks: 30,
        cases: 17,
        min_conflicts: 0,
        median_conflicts: 4,
        max_conflicts: 10,
    },
    Manifest {
        name: "cursorrules",
        chunks: 65,
        cases: 19,
        min_conflicts: 0,
        median_conflicts: 3,
        max_conflicts: 25,
    },
];

fn manifest_key(name: &str) -> String {
    name.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase()
}

/// The published manifest whose name matches `name`, ignoring case and
/// punctuation.
pub fn manifest_for(name: &str) -> Option<&'static Manifest> {
    let key = manifest_key(name);
    KNOWN_MANIFESTS.iter().find(|m| m.name == key)
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> BenchError {
    BenchError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

impl Dataset {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ds: Dataset = serde_path_to_error::deserialize(de).map_err(|e| schema(e.path().to_string(), e.inner().to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    /// Structural checks: unique ids, ground truth and targets refer to
    /// known chunks, targets present exactly for edits and never counted as
    /// ground truth.
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut ids = BTreeSet::new();
        for (i, c) in self.chunks.iter().enumerate() {
            if !ids.insert(&c.id) {
                return Err(schema(format!("chunks[{i}].id"), format!("duplicate chunk id `{}`", c.id)));
            }
        }
        let mut case_ids = BTreeSet::new();
        for (i, case) in self.cases.iter().enumerate() {
            if !case_ids.insert(&case.id) {
                return Err(schema(format!("cases[{i}].id"), format!("duplicate case id `{}`", case.id)));
            }
            if case.new_info.trim().is_empty() {
                return Err(schema(format!("cases[{i}].new_info"), "must not be empty"));
            }
            if let Some(bad) = case.ground_truth.iter().find(|g| !ids.contains(g)) {
                return Err(schema(format!("cases[{i}].ground_truth"), format!("unknown chunk `{bad}`")));
            }
            match (&case.target, case.action) {
                (None, Action::Edit) => return Err(schema(format!("cases[{i}].target"), "edit cases need a target")),
                (Some(_), Action::Add | Action::Change) => {
                    return Err(schema(format!("cases[{i}].target"), "only edit cases take a target"))
                }
                (Some(t), _) if !ids.contains(t) => {
                    return Err(schema(format!("cases[{i}].target"), format!("unknown chunk `{t}`")))
                }
                (Some(t), _) if case.ground_truth.contains(t) => {
                    return Err(schema(format!("cases[{i}].ground_truth"), "the edited chunk cannot be ground truth"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn check_manifest(&self, m: &Manifest) -> Result<(), BenchError> {
        let fail = |message: String| BenchError::Manifest {
            name: self.name.clone(),
            message,
        };
        if self.chunks.len() != m.chunks {
            return Err(fail(format!("expected {} chunks, found {}", m.chunks, self.chunks.len())));
        }
        if self.cases.len() != m.cases {
            return Err(fail(format!("expected {} cases, found {}", m.cases, self.cases.len())));
        }
        let (min, median, max) = self.conflict_stats();
        if (min, median, max) != (m.min_conflicts, m.median_conflicts, m.max_conflicts) {
            return Err(fail(format!(
                "conflict stats (min, median, max) = ({min}, {median}, {max}), expected ({}, {}, {})",
                m.min_conflicts, m.median_conflicts, m.max_conflicts
            )));
        }
        Ok(())
    }

    /// Min, median (lower middle for even counts) and max ground-truth size.
    pub fn conflict_stats(&self) -> (usize, usize, usize) {
        let mut sizes: Vec<usize> = self.cases.iter().map(|c| c.ground_truth.len()).collect();
        if sizes.is_empty() {
            return (0, 0, 0);
        }
        sizes.sort_unstable();
        (sizes[0], sizes[(sizes.len() - 1) / 2], sizes[sizes.len() - 1])
    }

    pub fn spec(&self) -> IntentSpec {
        IntentSpec::from_chunks(self.chunks.iter().map(|c| (c.id.clone(), c.text.clone())))
            .expect("validated dataset has unique ids")
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &ChunkId> {
        self.chunks.iter().map(|c| &c.id)
    }
}

/// Reads and validates a dataset. Datasets named after a published
/// benchmark must also match its manifest.
pub fn load_benchmark(path: &Path) -> Result<Dataset, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let ds = Dataset::from_json(&text)?;
    if let Some(m) = manifest_for(&ds.name) {
        ds.check_manifest(m)?;
    }
    Ok(ds)
}
