use std::fmt;

use serde::{Deserialize, Serialize};

/// Outcome of classifying one existing chunk against new information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictClass {
    Direct,
    Ambiguous,
    None,
}

impl ConflictClass {
    pub fn is_conflict(self) -> bool {
        !matches!(self, ConflictClass::None)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConflictClass::Direct => "direct",
            ConflictClass::Ambiguous => "ambiguous",
            ConflictClass::None => "none",
        }
    }
}

impl fmt::Display for ConflictClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictVerdict {
    pub class: ConflictClass,
    pub reasoning: String,
}

impl ConflictVerdict {
    pub const MISSING_REASONING: &'static str = "(no reasoning provided)";

    /// Builds a verdict, filling in a placeholder when a conflict arrives
    /// without reasoning so every flagged chunk has something to display.
    pub fn new(class: ConflictClass, reasoning: impl Into<String>) -> Self {
        let mut reasoning = reasoning.into();
        if class.is_conflict() && reasoning.trim().is_empty() {
            reasoning = Self::MISSING_REASONING.to_string();
        }
        Self { class, reasoning }
    }

    pub fn direct(reasoning: impl Into<String>) -> Self {
        Self::new(ConflictClass::Direct, reasoning)
    }

    pub fn ambiguous(reasoning: impl Into<String>) -> Self {
        Self::new(ConflictClass::Ambiguous, reasoning)
    }

    pub fn none() -> Self {
        Self {
            class: ConflictClass::None,
            reasoning: String::new(),
        }
    }
}
