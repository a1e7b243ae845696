//! Prompt-template catalog.
//!
//! Templates are plain text files under `prompts/`, embedded at build time
//! and overridable at runtime from a directory with the same file names
//! (`<name>.system.txt`, `<name>.input.txt`). Placeholders are `{name}`;
//! `{{` and `}}` render as literal braces, and braces that do not enclose
//! an identifier are left alone.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Action;

pub type Vars = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    ConflictClassify,
    EntityExtract,
    GlobalRewrite,
    LocalRewrite,
    ClarifyRouter,
    UnderlineWords,
    ResolutionStrategies,
    DropAllDocs,
    InksyncEdits,
}

impl TemplateName {
    pub const ALL: [TemplateName; 9] = [
        TemplateName::ConflictClassify,
        TemplateName::EntityExtract,
        TemplateName::GlobalRewrite,
        TemplateName::LocalRewrite,
        TemplateName::ClarifyRouter,
        TemplateName::UnderlineWords,
        TemplateName::ResolutionStrategies,
        TemplateName::DropAllDocs,
        TemplateName::InksyncEdits,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::ConflictClassify => "conflict_classify",
            TemplateName::EntityExtract => "entity_extract",
            TemplateName::GlobalRewrite => "global_rewrite",
            TemplateName::LocalRewrite => "local_rewrite",
            TemplateName::ClarifyRouter => "clarify_router",
            TemplateName::UnderlineWords => "underline_words",
            TemplateName::ResolutionStrategies => "resolution_strategies",
            TemplateName::DropAllDocs => "drop_all_docs",
            TemplateName::InksyncEdits => "inksync_edits",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` has unbound placeholder `{{{placeholder}}}`")]
    Unbound { template: TemplateName, placeholder: String },
    #[error("cannot read template override `{path}`: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub system_text: String,
    pub input_text: String,
}

/// Rendered `(system, user)` message pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub input: String,
}

impl PromptTemplate {
    pub fn render(&self, vars: &Vars) -> Result<RenderedPrompt, TemplateError> {
        Ok(RenderedPrompt {
            system: render_text(self.name, &self.system_text, vars)?,
            input: render_text(self.name, &self.input_text, vars)?,
        })
    }

    /// Placeholder names used by this template, in order of first use.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for text in [&self.system_text, &self.input_text] {
            for_each_token(text, |tok| {
                if let Token::Placeholder(p) = tok {
                    if !out.iter().any(|o| o == p) {
                        out.push(p.to_string());
                    }
                }
            });
        }
        out
    }
}

enum Token<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn for_each_token<'a>(text: &'a str, mut f: impl FnMut(Token<'a>)) {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut lit_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                f(Token::Literal(&text[lit_start..i + 1]));
                i += 2;
                lit_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                f(Token::Literal(&text[lit_start..i + 1]));
                i += 2;
                lit_start = i;
            }
            b'{' => {
                let rest = &text[i + 1..];
                let ident_len = rest
                    .bytes()
                    .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                    .count();
                let starts_ok = rest
                    .bytes()
                    .next()
                    .is_some_and(|b| b.is_ascii_alphabetic() || b == b'_');
                if starts_ok && rest.as_bytes().get(ident_len) == Some(&b'}') {
                    f(Token::Literal(&text[lit_start..i]));
                    f(Token::Placeholder(&rest[..ident_len]));
                    i += ident_len + 2;
                    lit_start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    f(Token::Literal(&text[lit_start..]));
}

fn render_text(name: TemplateName, text: &str, vars: &Vars) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut missing = None;
    for_each_token(text, |tok| match tok {
        Token::Literal(s) => out.push_str(s),
        Token::Placeholder(p) => match vars.get(p) {
            Some(v) => out.push_str(v),
            None => {
                missing.get_or_insert_with(|| p.to_string());
            }
        },
    });
    match missing {
        Some(placeholder) => Err(TemplateError::Unbound {
            template: name,
            placeholder,
        }),
        None => Ok(out),
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("conflict_classify.system.txt", include_str!("../../prompts/conflict_classify.system.txt")),
    ("conflict_classify.input.txt", include_str!("../../prompts/conflict_classify.input.txt")),
    ("entity_extract.system.txt", include_str!("../../prompts/entity_extract.system.txt")),
    ("entity_extract.input.txt", include_str!("../../prompts/entity_extract.input.txt")),
    ("global_rewrite.input.txt", include_str!("../../prompts/global_rewrite.input.txt")),
    ("global_rewrite.change_extension.txt", include_str!("../../prompts/global_rewrite.change_extension.txt")),
    ("local_rewrite.system.txt", include_str!("../../prompts/local_rewrite.system.txt")),
    ("local_rewrite.input.txt", include_str!("../../prompts/local_rewrite.input.txt")),
    ("clarify_router.system.txt", include_str!("../../prompts/clarify_router.system.txt")),
    ("clarify_router.input.txt", include_str!("../../prompts/clarify_router.input.txt")),
    ("underline_words.system.txt", include_str!("../../prompts/underline_words.system.txt")),
    ("underline_words.input.txt", include_str!("../../prompts/underline_words.input.txt")),
    ("resolution_strategies.system.txt", include_str!("../../prompts/resolution_strategies.system.txt")),
    ("resolution_strategies.input.txt", include_str!("../../prompts/resolution_strategies.input.txt")),
    ("drop_all_docs.input.txt", include_str!("../../prompts/drop_all_docs.input.txt")),
    ("inksync_edits.system.txt", include_str!("../../prompts/inksync_edits.system.txt")),
    ("inksync_edits.input.txt", include_str!("../../prompts/inksync_edits.input.txt")),
    ("action_prompt.add.txt", include_str!("../../prompts/action_prompt.add.txt")),
    ("action_prompt.change.txt", include_str!("../../prompts/action_prompt.change.txt")),
    ("action_prompt.edit.txt", include_str!("../../prompts/action_prompt.edit.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    files: BTreeMap<String, String>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        Self {
            files: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Built-in catalog with any same-named files in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut cat = Self::builtin();
        let names: Vec<String> = cat.files.keys().cloned().collect();
        for name in names {
            let path = dir.join(&name);
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                cat.files.insert(name, text);
            }
        }
        Ok(cat)
    }

    fn file(&self, name: &str) -> &str {
        self.files.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn template(&self, name: TemplateName) -> PromptTemplate {
        PromptTemplate {
            name,
            system_text: self.file(&format!("{name}.system.txt")).to_string(),
            input_text: self.file(&format!("{name}.input.txt")).to_string(),
        }
    }

    /// Action-specific instruction bound as `{action_prompt}` by both
    /// baselines.
    pub fn action_prompt(&self, action: Action) -> &str {
        self.file(&format!("action_prompt.{}.txt", action.as_str()))
    }

    /// Extra instruction appended to the global rewrite for `change`
    /// requests, allowing the model to propose one new chunk via `ADD:`.
    pub fn rewrite_change_extension(&self) -> &str {
        self.file("global_rewrite.change_extension.txt")
    }
}
