use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::verdict::ConflictClass;

/// Which verdict classes count as a predicted conflict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    #[default]
    Any,
    DirectOnly,
}

impl PositiveClass {
    pub fn is_positive(self, class: ConflictClass) -> bool {
        match self {
            PositiveClass::Any => class.is_conflict(),
            PositiveClass::DirectOnly => class == ConflictClass::Direct,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PositiveClass::Any => "any",
            PositiveClass::DirectOnly => "direct_only",
        }
    }
}

impl FromStr for PositiveClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "any" => Ok(PositiveClass::Any),
            "direct_only" | "direct" => Ok(PositiveClass::DirectOnly),
            other => Err(format!("unknown positive class `{other}` (expected any or direct_only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion counts and ratios for one case. Both sets must lie inside a
/// universe of `universe` items.
pub fn compute_metrics<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>, universe: usize) -> CaseMetrics {
    let tp = predicted.intersection(truth).count();
    let fp = predicted.len() - tp;
    let fn_ = truth.len() - tp;
    let tn = universe.saturating_sub(tp + fp + fn_);
    if predicted.is_empty() && truth.is_empty() {
        return CaseMetrics {
            tp,
            fp,
            fn_,
            tn,
            accuracy: 1.0,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    CaseMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy: ratio(tp + tn, universe.max(tp + fp + fn_)),
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 with fewer than two values.
    pub stddev: f64,
    pub n: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.stddev)
    }
}

/// Welford's single-pass mean and variance.
pub fn summarize(values: impl IntoIterator<Item = f64>) -> Summary {
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let stddev = if n < 2 { 0.0 } else { (m2 / (n - 1) as f64).sqrt() };
    Summary { mean, stddev, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

impl Aggregate {
    pub fn of<'a>(cases: impl IntoIterator<Item = &'a CaseMetrics> + Clone) -> Self {
        Aggregate {
            accuracy: summarize(cases.clone().into_iter().map(|m| m.accuracy)),
            precision: summarize(cases.clone().into_iter().map(|m| m.precision)),
            recall: summarize(cases.clone().into_iter().map(|m| m.recall)),
            f1: summarize(cases.into_iter().map(|m| m.f1)),
        }
    }
}
