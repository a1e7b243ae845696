use serde::{Deserialize, Serialize};

use super::{Chunk, ChunkId, ChunkState, IntentSpec, StoreError};

pub const SPEC_JSON_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    MarkdownList,
    SpecJson,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecJsonDoc {
    version: u32,
    chunks: Vec<SpecJsonChunk>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecJsonChunk {
    id: String,
    text: String,
    #[serde(default = "neutral")]
    state: ChunkState,
}

fn neutral() -> ChunkState {
    ChunkState::Neutral
}

#[derive(Debug, Serialize, Deserialize)]
struct ReviewDoc {
    version: u32,
    chunks: Vec<Chunk>,
}

pub(super) fn load(source: &[u8], format: SourceFormat) -> Result<IntentSpec, StoreError> {
    let text = std::str::from_utf8(source).map_err(|e| StoreError::Format {
        field: "<document>".into(),
        message: format!("not UTF-8: {e}"),
    })?;
    match format {
        SourceFormat::MarkdownList => {
            let chunks = parse_markdown(text)
                .into_iter()
                .enumerate()
                .map(|(i, t)| (ChunkId(format!("c{i}")), t));
            IntentSpec::from_chunks(chunks)
        }
        SourceFormat::SpecJson => {
            if text.trim().is_empty() {
                return IntentSpec::from_chunks(std::iter::empty());
            }
            let doc: SpecJsonDoc = from_json(text)?;
            check_version(doc.version)?;
            for (i, c) in doc.chunks.iter().enumerate() {
                if c.id.is_empty() {
                    return Err(StoreError::Format {
                        field: format!("chunks[{i}].id"),
                        message: "empty id".into(),
                    });
                }
            }
            // Review state is not part of a loaded document; everything
            // starts neutral. Use `from_review_json` to restore a session.
            IntentSpec::from_chunks(doc.chunks.into_iter().map(|c| (ChunkId(c.id), c.text)))
        }
    }
}

pub(super) fn load_review(source: &[u8]) -> Result<IntentSpec, StoreError> {
    let text = std::str::from_utf8(source).map_err(|e| StoreError::Format {
        field: "<document>".into(),
        message: format!("not UTF-8: {e}"),
    })?;
    let doc: ReviewDoc = from_json(text)?;
    check_version(doc.version)?;
    let mut chunks = doc.chunks;
    for (i, c) in chunks.iter_mut().enumerate() {
        c.ordinal = i;
        c.check_invariants().map_err(|message| StoreError::Format {
            field: format!("chunks[{i}]"),
            message,
        })?;
    }
    Ok(IntentSpec::with_chunks(chunks))
}

fn check_version(version: u32) -> Result<(), StoreError> {
    if version != SPEC_JSON_VERSION {
        return Err(StoreError::Format {
            field: "version".into(),
            message: format!("unsupported version {version}, expected {SPEC_JSON_VERSION}"),
        });
    }
    Ok(())
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, StoreError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| StoreError::Format {
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub(super) fn spec_json(spec: &IntentSpec) -> String {
    let doc = SpecJsonDoc {
        version: SPEC_JSON_VERSION,
        chunks: spec
            .chunks
            .iter()
            .map(|c| SpecJsonChunk {
                id: c.id.0.clone(),
                text: c.text.clone(),
                state: c.state,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("spec json serializes")
}

pub(super) fn review_json(spec: &IntentSpec) -> String {
    let doc = ReviewDoc {
        version: SPEC_JSON_VERSION,
        chunks: spec.chunks.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("review json serializes")
}

pub(super) fn markdown(spec: &IntentSpec) -> String {
    let mut out = String::new();
    for c in spec.chunks.iter().filter(|c| c.state != ChunkState::ProposedAdd) {
        out.push_str("- ");
        out.push_str(&c.text.replace('\n', "\n  "));
        out.push('\n');
    }
    out
}

/// Splits a document into chunk texts.
///
/// If any line carries a list marker (`-`, `*`, `N.`) every non-empty line
/// is its own chunk, markers stripped; headers and other lines become
/// ordinary chunks. Otherwise the document is prose and blank lines
/// separate paragraphs.
fn parse_markdown(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let has_list = lines.iter().any(|l| strip_marker(l).is_some());
    if has_list {
        return lines
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| strip_marker(l).unwrap_or(l.trim()).to_string())
            .filter(|t| !t.is_empty())
            .collect();
    }
    let mut out = Vec::new();
    let mut para: Vec<&str> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            if !para.is_empty() {
                out.push(para.join("\n"));
                para.clear();
            }
        } else {
            para.push(line.trim());
        }
    }
    if !para.is_empty() {
        out.push(para.join("\n"));
    }
    out
}

fn strip_marker(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for m in ["- ", "* "] {
        if let Some(rest) = t.strip_prefix(m) {
            return Some(rest.trim());
        }
    }
    if t == "-" || t == "*" {
        return Some("");
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(body) = rest.strip_prefix(". ") {
            return Some(body.trim());
        }
    }
    None
}
