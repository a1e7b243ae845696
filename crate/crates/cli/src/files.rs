//! A spec file and the sidecars kept next to it.
//!
//! | sidecar            | contents                                         |
//! |--------------------|--------------------------------------------------|
//! | `<spec>.kg.json`   | the knowledge graph                              |
//! | `<spec>.review.json` | flags and pending proposals awaiting review    |
//! | `<spec>.prev`      | the spec file as it was before the last `apply --yes` |
//!
//! The spec file itself only ever holds committed text.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use semcommit_core::store::SourceFormat;
use semcommit_core::{ChunkState, Gateway, IntentSpec, KnowledgeGraph, Parallelism};
use tracing::debug;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecFiles {
    spec: PathBuf,
}

/// A spec as loaded for editing, with notes for the user.
#[derive(Debug)]
pub struct Loaded {
    pub spec: IntentSpec,
    /// True when the review sidecar was applied.
    pub from_review: bool,
    pub warnings: Vec<String>,
}

impl SpecFiles {
    pub fn new(spec: impl Into<PathBuf>) -> Self {
        Self { spec: spec.into() }
    }

    pub fn spec_path(&self) -> &Path {
        &self.spec
    }

    fn sidecar(&self, suffix: &str) -> PathBuf {
        let mut s: OsString = self.spec.as_os_str().to_owned();
        s.push(suffix);
        s.into()
    }

    pub fn graph_path(&self) -> PathBuf {
        self.sidecar(".kg.json")
    }

    pub fn review_path(&self) -> PathBuf {
        self.sidecar(".review.json")
    }

    pub fn prev_path(&self) -> PathBuf {
        self.sidecar(".prev")
    }

    /// `.json` files use the spec JSON format, everything else a markdown list.
    pub fn format(&self) -> SourceFormat {
        match self.spec.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => SourceFormat::SpecJson,
            _ => SourceFormat::MarkdownList,
        }
    }

    pub fn read_spec(&self) -> Result<IntentSpec, CliError> {
        let bytes = read(&self.spec)?;
        IntentSpec::load_spec(&bytes, self.format()).map_err(|e| CliError::Format(format!("{}: {e}", self.spec.display())))
    }

    pub fn render(&self, spec: &IntentSpec) -> String {
        match self.format() {
            SourceFormat::SpecJson => spec.to_spec_json() + "\n",
            SourceFormat::MarkdownList => spec.to_markdown(),
        }
    }

    /// The spec file with the review sidecar applied. A sidecar whose
    /// committed texts no longer match the spec file is stale and ignored.
    pub fn load(&self) -> Result<Loaded, CliError> {
        let on_disk = self.read_spec()?;
        let review = self.review_path();
        if !review.exists() {
            return Ok(Loaded {
                spec: on_disk,
                from_review: false,
                warnings: Vec::new(),
            });
        }
        let bytes = read(&review)?;
        let reviewed =
            IntentSpec::from_review_json(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", review.display())))?;
        if reviewed.committed_texts() == on_disk.committed_texts() {
            Ok(Loaded {
                spec: reviewed,
                from_review: true,
                warnings: Vec::new(),
            })
        } else {
            Ok(Loaded {
                spec: on_disk,
                from_review: false,
                warnings: vec![format!(
                    "ignoring stale {}: the spec file changed since it was written",
                    review.display()
                )],
            })
        }
    }

    /// The stored graph brought up to date with `spec`, or a fresh one.
    pub fn load_graph(&self, spec: &IntentSpec, gateway: &Gateway, mode: Parallelism) -> (KnowledgeGraph, Vec<String>) {
        let path = self.graph_path();
        let stored = fs::read_to_string(&path).ok().and_then(|t| match KnowledgeGraph::from_json(&t) {
            Ok(g) => Some(g),
            Err(e) => {
                debug!(path = %path.display(), error = %e, "discarding unreadable graph");
                None
            }
        });
        let mut graph = match stored {
            Some(mut g) => {
                let touched = g.sync(spec, gateway);
                debug!(touched = touched.len(), "graph synced");
                g
            }
            None => KnowledgeGraph::induce(spec, gateway, mode),
        };
        let warnings = graph.take_warnings();
        (graph, warnings)
    }

    pub fn write_graph(&self, graph: &KnowledgeGraph) -> Result<(), CliError> {
        write_atomic(&self.graph_path(), graph.to_json().as_bytes())
    }

    /// Writes whatever changed: the spec file only when committed text
    /// differs from what is on disk, the review sidecar while any chunk is
    /// under review (removed otherwise), and the graph when given.
    pub fn persist(&self, spec: &IntentSpec, graph: Option<&KnowledgeGraph>) -> Result<Persisted, CliError> {
        let mut out = Persisted::default();
        let on_disk = self.read_spec()?;
        if on_disk.committed_texts() != spec.committed_texts() {
            write_atomic(&self.spec, self.render(spec).as_bytes())?;
            out.spec_written = true;
        }
        let review = self.review_path();
        if spec.chunks().iter().any(|c| c.state() != ChunkState::Neutral) {
            write_atomic(&review, (spec.to_review_json() + "\n").as_bytes())?;
            out.review_written = true;
        } else if review.exists() {
            fs::remove_file(&review).map_err(|e| CliError::io(&review, e))?;
        }
        if let Some(g) = graph {
            self.write_graph(g)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Persisted {
    pub spec_written: bool,
    pub review_written: bool,
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Write to a temporary file next to `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp: OsString = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use semcommit_core::store::{ChunkEvent, Origin};
    use semcommit_core::ChunkId;

    fn files(dir: &Path, name: &str, body: &str) -> SpecFiles {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        SpecFiles::new(p)
    }

    #[test]
    fn sidecar_names_and_format() {
        let f = SpecFiles::new("notes/rules.md");
        assert_eq!(f.graph_path(), PathBuf::from("notes/rules.md.kg.json"));
        assert_eq!(f.review_path(), PathBuf::from("notes/rules.md.review.json"));
        assert_eq!(f.format(), SourceFormat::MarkdownList);
        assert_eq!(SpecFiles::new("a.JSON").format(), SourceFormat::SpecJson);
    }

    #[test]
    fn pending_review_leaves_spec_file_alone() {
        let dir = tempfile::tempdir().unwrap();
        let body = "- One.\n\n- Two.\n";
        let f = files(dir.path(), "s.md", body);
        let mut loaded = f.load().unwrap();
        assert!(!loaded.from_review);
        loaded
            .spec
            .transition(
                &ChunkId::new("c1"),
                ChunkEvent::ProposeEdit {
                    text: "Three.".into(),
                    origin: Origin::User,
                },
            )
            .unwrap();
        let p = f.persist(&loaded.spec, None).unwrap();
        assert!(!p.spec_written && p.review_written);
        assert_eq!(fs::read_to_string(f.spec_path()).unwrap(), body);

        let again = f.load().unwrap();
        assert!(again.from_review);
        assert_eq!(again.spec.chunks(), loaded.spec.chunks());

        let mut spec = again.spec;
        spec.transition(&ChunkId::new("c1"), ChunkEvent::Resolve).unwrap();
        let p = f.persist(&spec, None).unwrap();
        assert!(p.spec_written && !p.review_written);
        assert!(!f.review_path().exists());
        assert_eq!(f.read_spec().unwrap().committed_texts(), ["One.", "Three."]);
    }

    #[test]
    fn stale_review_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let f = files(dir.path(), "s.md", "- One.\n");
        let mut spec = f.read_spec().unwrap();
        spec.transition(&ChunkId::new("c0"), ChunkEvent::ProposeDelete { origin: Origin::User }).unwrap();
        f.persist(&spec, None).unwrap();
        fs::write(f.spec_path(), "- Other.\n").unwrap();
        let loaded = f.load().unwrap();
        assert!(!loaded.from_review);
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.spec.committed_texts(), ["Other."]);
    }

    #[test]
    fn json_specs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = files(dir.path(), "s.json", "");
        let mut spec = f.read_spec().unwrap();
        spec.add_chunk("Only rule.");
        f.persist(&spec, None).unwrap();
        assert_eq!(f.read_spec().unwrap().committed_texts(), ["Only rule."]);
    }

    #[test]
    fn corrupt_review_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = files(dir.path(), "s.md", "- One.\n");
        fs::write(f.review_path(), "{").unwrap();
        assert!(matches!(f.load(), Err(CliError::Format(_))));
    }
}
