//! Strict-but-tolerant parsers for model output.
//!
//! None of these panic on arbitrary input; they either return a value or a
//! typed [`ParseError`] carrying the raw text.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::store::ChunkId;
use crate::verdict::{ConflictClass, ConflictVerdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in model output")]
    NoJson { raw: String },
    #[error("unrecognized conflict class `{token}`")]
    BadClass { token: String, raw: String },
    #[error("missing or malformed key `{key}`")]
    MissingKey { key: &'static str, raw: String },
    #[error("expected {expected} numbered items, found {found}")]
    CountMismatch { expected: usize, found: usize, raw: String },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::NoJson { raw }
            | ParseError::BadClass { raw, .. }
            | ParseError::MissingKey { raw, .. }
            | ParseError::CountMismatch { raw, .. } => raw,
        }
    }
}

/// First JSON value of the requested shape embedded in `raw`, skipping code
/// fences and surrounding prose.
fn first_json(raw: &str, want_object: bool, want_array: bool) -> Option<Value> {
    for (i, ch) in raw.char_indices() {
        let hit = (want_object && ch == '{') || (want_array && ch == '[');
        if !hit {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if (want_object && v.is_object()) || (want_array && v.is_array()) {
                return Some(v);
            }
        }
    }
    None
}

fn class_from_token(token: &str) -> Option<ConflictClass> {
    match token.trim().trim_matches(|c: char| c == ',' || c == '.').to_ascii_lowercase().as_str() {
        "yes" => Some(ConflictClass::Direct),
        "ambiguous" => Some(ConflictClass::Ambiguous),
        "no" => Some(ConflictClass::None),
        _ => None,
    }
}

static CLASS_FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""is_conflicting"\s*:\s*"([^"]*)""#).expect("valid regex"));
static REASONING_FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""reasoning"\s*:\s*"((?:[^"\\]|\\.)*)""#).expect("valid regex"));

/// Parses the classifier's `{"reasoning", "is_conflicting"}` object.
///
/// Falls back to field-level extraction when the object is not valid JSON
/// (the requested format omits a comma between the two keys, which models
/// sometimes copy).
pub fn parse_conflict_json(raw: &str) -> Result<ConflictVerdict, ParseError> {
    if let Some(obj) = first_json(raw, true, false) {
        if let Some(token) = obj.get("is_conflicting").and_then(Value::as_str) {
            let class = class_from_token(token).ok_or_else(|| ParseError::BadClass {
                token: token.to_string(),
                raw: raw.to_string(),
            })?;
            let reasoning = obj
                .get("reasoning")
                .and_then(Value::as_str)
                .unwrap_or_default();
            return Ok(verdict(class, reasoning));
        }
    }
    let Some(caps) = CLASS_FIELD.captures(raw) else {
        return Err(if raw.contains('{') {
            ParseError::MissingKey {
                key: "is_conflicting",
                raw: raw.to_string(),
            }
        } else {
            ParseError::NoJson { raw: raw.to_string() }
        });
    };
    let token = &caps[1];
    let class = class_from_token(token).ok_or_else(|| ParseError::BadClass {
        token: token.to_string(),
        raw: raw.to_string(),
    })?;
    let reasoning = REASONING_FIELD
        .captures(raw)
        .map(|c| {
            serde_json::from_str::<String>(&format!("\"{}\"", &c[1])).unwrap_or_else(|_| c[1].to_string())
        })
        .unwrap_or_default();
    Ok(verdict(class, &reasoning))
}

fn verdict(class: ConflictClass, reasoning: &str) -> ConflictVerdict {
    if class == ConflictClass::None {
        ConflictVerdict {
            class,
            reasoning: reasoning.to_string(),
        }
    } else {
        ConflictVerdict::new(class, reasoning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RewriteItem {
    Text(String),
    Delete,
}

static ITEM_START: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+)\.(?:\s+(.*)|$)").expect("valid regex"));

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Numbered markdown items in order. A line opens item `k` only when it
/// starts with `k.` and `k` is the next expected number; any other line
/// continues the current item. Text before item 1 is ignored.
pub fn parse_numbered_items(raw: &str) -> Vec<String> {
    let mut items: Vec<Vec<&str>> = Vec::new();
    for line in raw.lines() {
        if is_fence(line) {
            continue;
        }
        if let Some(caps) = ITEM_START.captures(line) {
            if caps[1].parse::<usize>().ok() == Some(items.len() + 1) {
                items.push(vec![caps.get(2).map_or("", |m| m.as_str())]);
                continue;
            }
        }
        if let Some(current) = items.last_mut() {
            current.push(line);
        }
    }
    items
        .into_iter()
        .map(|lines| lines.join("\n").trim().to_string())
        .collect()
}

fn is_delete_marker(body: &str) -> bool {
    body.trim().trim_matches(|c| c == '"' || c == '*' || c == '`' || c == '\'') == "DELETE"
}

/// Parses a rewrite of exactly `expected_n` items; `DELETE` bodies become
/// deletion markers.
pub fn parse_numbered_list(raw: &str, expected_n: usize) -> Result<Vec<RewriteItem>, ParseError> {
    let items = parse_numbered_items(raw);
    if items.len() != expected_n {
        return Err(ParseError::CountMismatch {
            expected: expected_n,
            found: items.len(),
            raw: raw.to_string(),
        });
    }
    Ok(items
        .into_iter()
        .map(|body| {
            if is_delete_marker(&body) {
                RewriteItem::Delete
            } else {
                RewriteItem::Text(body)
            }
        })
        .collect())
}

/// Removes `ADD:` lines from a rewrite response, returning the remaining
/// text and the body of the last `ADD:` line, if any.
pub fn split_add_directive(raw: &str) -> (String, Option<String>) {
    let mut kept = Vec::new();
    let mut added = None;
    for line in raw.lines() {
        match line.trim_start().strip_prefix("ADD:") {
            Some(body) if !body.trim().is_empty() => added = Some(body.trim().to_string()),
            Some(_) => {}
            None => kept.push(line),
        }
    }
    (kept.join("\n"), added)
}

/// An InkSync-style edit whose `original_text` was found in a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundEdit {
    pub chunk_id: ChunkId,
    pub document_id: Option<String>,
    pub original_text: String,
    pub replace_text: String,
}

/// Parses `{"edits": [...]}` and binds each edit to the first chunk (in the
/// given order) containing its `original_text` verbatim. The response's
/// `document_id` is kept for display only; unmatched edits are dropped.
pub fn parse_edits_json(raw: &str, chunks: &[(&ChunkId, &str)]) -> Result<Vec<BoundEdit>, ParseError> {
    let obj = first_json(raw, true, false).ok_or_else(|| ParseError::NoJson { raw: raw.to_string() })?;
    let edits = obj
        .get("edits")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::MissingKey {
            key: "edits",
            raw: raw.to_string(),
        })?;
    let mut out = Vec::new();
    for e in edits {
        let Some(original) = e.get("original_text").and_then(Value::as_str) else {
            continue;
        };
        if original.is_empty() {
            continue;
        }
        let Some((id, _)) = chunks.iter().find(|(_, text)| text.contains(original)) else {
            continue;
        };
        out.push(BoundEdit {
            chunk_id: (*id).clone(),
            document_id: e.get("document_id").and_then(|d| match d {
                Value::Null => None,
                Value::String(s) => Some(s.clone()),
                other => Some(other.to_string()),
            }),
            original_text: original.to_string(),
            replace_text: e
                .get("replace_text")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DropAllDocsParse {
    /// 0-based ordinals named in `IDS:` lines.
    pub ordinals: BTreeSet<usize>,
    /// Ids outside `1..=n`.
    pub out_of_range: Vec<u64>,
    pub passed: bool,
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

/// Parses the single-prompt baseline's answer over `n` numbered chunks.
///
/// Integers after each `IDS:` marker (rest of that line, or the next
/// non-empty line when the marker ends its line) are read as 1-based ids.
/// An answer without `IDS:` is treated as `PASS`.
pub fn parse_drop_all_docs(raw: &str, n: usize) -> DropAllDocsParse {
    let mut out = DropAllDocsParse::default();
    let lines: Vec<&str> = raw.lines().collect();
    let mut found_marker = false;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if let Some(pos) = line.find("IDS:") {
            found_marker = true;
            let mut rest = line[pos + 4..].trim().to_string();
            if rest.is_empty() {
                if let Some(next) = lines[i + 1..].iter().find(|l| !l.trim().is_empty()) {
                    rest = next.to_string();
                }
            }
            for m in INTEGER.find_iter(&rest) {
                match m.as_str().parse::<u64>() {
                    Ok(id) if id >= 1 && (id as usize) <= n => {
                        out.ordinals.insert(id as usize - 1);
                    }
                    Ok(id) => out.out_of_range.push(id),
                    Err(_) => {}
                }
            }
        }
        i += 1;
    }
    out.passed = !found_marker;
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extraction {
    pub entities: Vec<String>,
    pub triples: Vec<Triple>,
}

impl Extraction {
    /// Every entity name, including triple endpoints, in first-seen order.
    pub fn all_entities(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let names = self
            .entities
            .iter()
            .map(String::as_str)
            .chain(self.triples.iter().flat_map(|t| [t.subject.as_str(), t.object.as_str()]));
        for n in names {
            if !n.trim().is_empty() && !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }
}

fn triple_from(v: &Value) -> Option<Triple> {
    let s = |x: &Value| x.as_str().map(str::to_string);
    match v {
        Value::Array(a) if a.len() == 3 => Some(Triple {
            subject: s(&a[0])?,
            relation: s(&a[1])?,
            object: s(&a[2])?,
        }),
        Value::Object(o) => Some(Triple {
            subject: s(o.get("subject")?)?,
            relation: o.get("relation").or_else(|| o.get("predicate")).and_then(Value::as_str)?.to_string(),
            object: s(o.get("object")?)?,
        }),
        _ => None,
    }
}

/// Parses entity-extraction output: either `{"entities": [...], "triples":
/// [...]}` or a bare array of triples. Triples may be 3-element arrays or
/// `{subject, relation, object}` objects; malformed entries are skipped.
pub fn parse_extraction(raw: &str) -> Result<Extraction, ParseError> {
    let v = first_json(raw, true, true).ok_or_else(|| ParseError::NoJson { raw: raw.to_string() })?;
    let (entities, triples) = match &v {
        Value::Array(items) => (None, Some(items.as_slice())),
        Value::Object(o) => {
            let ents = o.get("entities").and_then(Value::as_array).map(Vec::as_slice);
            let trips = o.get("triples").and_then(Value::as_array).map(Vec::as_slice);
            if ents.is_none() && trips.is_none() {
                return Err(ParseError::MissingKey {
                    key: "triples",
                    raw: raw.to_string(),
                });
            }
            (ents, trips)
        }
        _ => unreachable!("first_json returns objects or arrays"),
    };
    Ok(Extraction {
        entities: entities
            .unwrap_or_default()
            .iter()
            .filter_map(|e| e.as_str().map(str::to_string))
            .collect(),
        triples: triples.unwrap_or_default().iter().filter_map(triple_from).collect(),
    })
}

/// Question from the clarification router, if it asked one.
pub fn parse_clarification(raw: &str) -> Option<String> {
    let obj = first_json(raw, true, false)?;
    let needs = match obj.get("needs_clarification")? {
        Value::Bool(b) => *b,
        Value::String(s) => s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("yes"),
        _ => false,
    };
    let question = obj.get("question")?.as_str()?.trim();
    (needs && !question.is_empty()).then(|| question.to_string())
}

/// Words from the underline template: a JSON array of strings (or an object
/// with a `words` array).
pub fn parse_word_list(raw: &str) -> Vec<String> {
    let arr = match first_json(raw, true, true) {
        Some(Value::Array(a)) => a,
        Some(Value::Object(o)) => match o.get("words") {
            Some(Value::Array(a)) => a.clone(),
            _ => return Vec::new(),
        },
        _ => return Vec::new(),
    };
    arr.iter()
        .filter_map(Value::as_str)
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Strategy list: numbered items, or bullet lines when no numbering is used.
pub fn parse_strategies(raw: &str) -> Vec<String> {
    let items = parse_numbered_items(raw);
    if !items.is_empty() {
        return items.into_iter().filter(|s| !s.is_empty()).collect();
    }
    raw.lines()
        .filter_map(|l| l.trim_start().strip_prefix("- ").or_else(|| l.trim_start().strip_prefix("* ")))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// A local rewrite is plain text; strip fences and one layer of quotes.
pub fn clean_rewrite(raw: &str) -> String {
    let body: Vec<&str> = raw.lines().filter(|l| !is_fence(l)).collect();
    let text = body.join("\n");
    let t = text.trim();
    let unquoted = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .filter(|s| !s.contains('"'))
        .unwrap_or(t);
    unquoted.trim().to_string()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn conflict_yes_maps_to_direct() {
        let v = parse_conflict_json(r#"{"reasoning":"r","is_conflicting":"yes"}"#).unwrap();
        assert_eq!(v, ConflictVerdict::direct("r"));
    }

    #[test]
    fn conflict_fence_and_case() {
        let v = parse_conflict_json("```json\n{\"reasoning\":\"r\",\"is_conflicting\":\"Ambiguous\"}\n```").unwrap();
        assert_eq!((v.class, v.reasoning.as_str()), (ConflictClass::Ambiguous, "r"));
    }

    #[test]
    fn conflict_no_with_leading_prose() {
        let v = parse_conflict_json("Sure! Here it is: {\"reasoning\": \"fine\", \"is_conflicting\": \"NO\"}").unwrap();
        assert_eq!(v.class, ConflictClass::None);
        assert_eq!(v.reasoning, "fine");
    }

    #[test]
    fn conflict_missing_comma_is_tolerated() {
        let raw = "{\n  \"reasoning\": \"Mars has \\\"sand\\\" storms.\"\n  \"is_conflicting\": \"yes\"\n}";
        let v = parse_conflict_json(raw).unwrap();
        assert_eq!(v.class, ConflictClass::Direct);
        assert_eq!(v.reasoning, "Mars has \"sand\" storms.");
    }

    #[test]
    fn conflict_unparseable() {
        assert!(matches!(parse_conflict_json("PASS"), Err(ParseError::NoJson { raw }) if raw == "PASS"));
        assert!(matches!(
            parse_conflict_json(r#"{"reasoning":"r","is_conflicting":"maybe"}"#),
            Err(ParseError::BadClass { token, .. }) if token == "maybe"
        ));
    }

    #[test]
    fn direct_verdict_without_reasoning_gets_placeholder() {
        let v = parse_conflict_json(r#"{"is_conflicting":"yes"}"#).unwrap();
        assert_eq!(v.reasoning, ConflictVerdict::MISSING_REASONING);
    }

    #[test]
    fn numbered_list_with_delete() {
        assert_eq!(
            parse_numbered_list("1. a\n2. DELETE\n3. c", 3).unwrap(),
            vec![RewriteItem::Text("a".into()), RewriteItem::Delete, RewriteItem::Text("c".into())]
        );
    }

    #[test]
    fn numbered_list_count_mismatch() {
        assert!(matches!(
            parse_numbered_list("1. a", 2),
            Err(ParseError::CountMismatch { expected: 2, found: 1, .. })
        ));
    }

    #[test]
    fn numbered_list_continuation() {
        assert_eq!(
            parse_numbered_list("1. line one\ncontinued\n2. b", 2).unwrap(),
            vec![RewriteItem::Text("line one\ncontinued".into()), RewriteItem::Text("b".into())]
        );
    }

    #[test]
    fn numbered_list_out_of_sequence_numbers_continue() {
        let items = parse_numbered_items("Here you go:\n1. In 2049.\n2049. was a year\n2. b");
        assert_eq!(items, ["In 2049.\n2049. was a year", "b"]);
    }

    #[test]
    fn quoted_delete_is_delete() {
        assert_eq!(parse_numbered_list("1. \"DELETE\"", 1).unwrap(), vec![RewriteItem::Delete]);
        assert_eq!(parse_numbered_list("1. DELETE this", 1).unwrap(), vec![RewriteItem::Text("DELETE this".into())]);
    }

    #[test]
    fn add_directive_is_split_off() {
        let (rest, add) = split_add_directive("1. a\n2. b\nADD: squash commits");
        assert_eq!(rest, "1. a\n2. b");
        assert_eq!(add.as_deref(), Some("squash commits"));
        assert_eq!(split_add_directive("1. a").1, None);
    }

    fn chunk_table() -> Vec<(ChunkId, String)> {
        (0..6).map(|i| (ChunkId::new(format!("c{i}")), format!("chunk number {i} text."))).collect()
    }

    #[test]
    fn edits_bind_by_text_not_document_id() {
        let table = chunk_table();
        let refs: Vec<(&ChunkId, &str)> = table.iter().map(|(i, t)| (i, t.as_str())).collect();
        let raw = r#"{"edits": [{"document_id": 1, "original_text": "number 4 text", "replace_text": "x"}]}"#;
        let edits = parse_edits_json(raw, &refs).unwrap();
        assert_eq!(edits.len(), 1);
        assert_eq!(edits[0].chunk_id, ChunkId::new("c4"));
        assert_eq!(edits[0].document_id.as_deref(), Some("1"));
    }

    #[test]
    fn edits_absent_original_dropped() {
        let table = chunk_table();
        let refs: Vec<(&ChunkId, &str)> = table.iter().map(|(i, t)| (i, t.as_str())).collect();
        assert!(parse_edits_json(r#"{"edits":[{"original_text":"zzz","replace_text":"y"}]}"#, &refs)
            .unwrap()
            .is_empty());
        assert!(parse_edits_json(r#"{"edits":[]}"#, &refs).unwrap().is_empty());
        assert!(matches!(parse_edits_json("nope", &refs), Err(ParseError::NoJson { .. })));
        assert!(matches!(
            parse_edits_json(r#"{"changes":[]}"#, &refs),
            Err(ParseError::MissingKey { key: "edits", .. })
        ));
    }

    #[test]
    fn drop_all_docs_answers() {
        let pass = parse_drop_all_docs("PASS", 10);
        assert!(pass.passed && pass.ordinals.is_empty());
        let p = parse_drop_all_docs("CONFLICT: the fox.\nIDS: 2, 5", 10);
        assert_eq!(p.ordinals, BTreeSet::from([1, 4]));
        let p = parse_drop_all_docs("CONFLICT: x\nIDS:\n3 7 12", 10);
        assert_eq!(p.ordinals, BTreeSet::from([2, 6]));
        assert_eq!(p.out_of_range, vec![12]);
        let p = parse_drop_all_docs("CONFLICT: a\nIDS: 1\nCONFLICT: b\nIDS: 1, 2", 3);
        assert_eq!(p.ordinals, BTreeSet::from([0, 1]));
    }

    #[test]
    fn extraction_shapes() {
        let e = parse_extraction(r#"{"entities":["dog","player"],"triples":[["dog","barks_at","player"]]}"#).unwrap();
        assert_eq!(e.all_entities(), ["dog", "player"]);
        let e = parse_extraction(r#"[{"subject":"fox","relation":"collects","object":"nuts"}, "junk", [1,2,3]]"#)
            .unwrap();
        assert_eq!(e.triples.len(), 1);
        assert_eq!(e.all_entities(), ["fox", "nuts"]);
        assert!(parse_extraction("no json at all").is_err());
        assert!(parse_extraction(r#"{"foo": 1}"#).is_err());
    }

    #[test]
    fn clarification_contract() {
        assert_eq!(
            parse_clarification(r#"{"needs_clarification": true, "question": "Keep sandstorms?"}"#).as_deref(),
            Some("Keep sandstorms?")
        );
        assert_eq!(parse_clarification(r#"{"needs_clarification": false, "question": ""}"#), None);
        assert_eq!(parse_clarification("garbage"), None);
    }

    #[test]
    fn words_and_strategies() {
        assert_eq!(parse_word_list(r#"["primary", " nuts "]"#), ["primary", "nuts"]);
        assert_eq!(parse_word_list(r#"{"words":["a"]}"#), ["a"]);
        assert!(parse_word_list("none").is_empty());
        assert_eq!(parse_strategies("1. Do a.\n2. Do b."), ["Do a.", "Do b."]);
        assert_eq!(parse_strategies("- Do a.\n- Do b."), ["Do a.", "Do b."]);
    }

    #[test]
    fn rewrite_cleanup() {
        assert_eq!(clean_rewrite("```\nhello\n```"), "hello");
        assert_eq!(clean_rewrite("\"hello\"\n"), "hello");
        assert_eq!(clean_rewrite("say \"hi\" now"), "say \"hi\" now");
    }

    proptest! {
        #[test]
        fn parsers_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256), n in 1usize..8) {
            let raw = String::from_utf8_lossy(&bytes);
            let table = chunk_table();
            let refs: Vec<(&ChunkId, &str)> = table.iter().map(|(i, t)| (i, t.as_str())).collect();
            let _ = parse_conflict_json(&raw);
            let _ = parse_numbered_list(&raw, n);
            let _ = parse_edits_json(&raw, &refs);
            let _ = parse_drop_all_docs(&raw, n);
            let _ = parse_extraction(&raw);
            let _ = parse_clarification(&raw);
            let _ = parse_word_list(&raw);
            let _ = parse_strategies(&raw);
            let _ = clean_rewrite(&raw);
            let _ = split_add_directive(&raw);
        }

        #[test]
        fn structured_noise_never_panics(s in r#"[\{\}\[\]":,0-9a-zA-Z \n.\\]{0,120}"#) {
            let _ = parse_conflict_json(&s);
            let _ = parse_extraction(&s);
            let _ = parse_numbered_list(&s, 2);
            let _ = parse_drop_all_docs(&s, 3);
        }
    }
}
