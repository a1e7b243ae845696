use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, summarize, PositiveClass, Summary};
use super::{BenchError, Dataset};
use crate::engine::classify_all;
use crate::llm::Gateway;
use crate::parallel::Parallelism;
use crate::store::ChunkId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprExperimentConfig {
    pub fpr_levels: Vec<f64>,
    pub rng_seed: u64,
    pub positive: PositiveClass,
    /// Fan-out of the pairwise classification within one input set.
    pub parallelism: Parallelism,
}

impl Default for FprExperimentConfig {
    fn default() -> Self {
        Self {
            fpr_levels: vec![0.0, 0.5, 0.9],
            rng_seed: 0,
            positive: PositiveClass::Any,
            parallelism: Parallelism::Sequential,
        }
    }
}

impl FprExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.fpr_levels.is_empty() {
            return Err(BenchError::Config("fpr_levels is empty".into()));
        }
        if let Some(f) = self.fpr_levels.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return Err(BenchError::Config(format!("fpr level {f} outside [0, 1)")));
        }
        if self.fpr_levels.windows(2).any(|w| w[0] > w[1]) {
            return Err(BenchError::Config("fpr_levels must be sorted ascending".into()));
        }
        Ok(())
    }
}

/// Number of non-conflicting chunks to add to `truth` conflicting ones so
/// that the non-conflicting share comes closest to `fpr`. Ties go to the
/// smaller count.
pub fn injected_count(truth: usize, fpr: f64) -> usize {
    if truth == 0 || fpr <= 0.0 {
        return 0;
    }
    let exact = fpr * truth as f64 / (1.0 - fpr);
    let share = |k: usize| k as f64 / (k + truth) as f64;
    let lo = exact.floor() as usize;
    let hi = lo + 1;
    if (share(hi) - fpr).abs() < (share(lo) - fpr).abs() - 1e-12 {
        hi
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprLevelResult {
    pub fpr: f64,
    pub achieved_fpr: Summary,
    pub f1: Summary,
    /// Mean wall-clock per classifier call.
    pub mean_call_latency_ms: f64,
    pub calls: usize,
    pub provider_failures: usize,
    /// Cases where there were too few non-conflicting chunks to reach `fpr`.
    pub short_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprReport {
    pub dataset: String,
    pub model: String,
    pub rng_seed: u64,
    pub levels: Vec<FprLevelResult>,
    /// Cases with empty ground truth, which the experiment skips.
    pub skipped_cases: Vec<String>,
    /// Per case and level, the chunks that were injected.
    pub injected: Vec<(String, f64, Vec<ChunkId>)>,
}

impl FprReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# FPR sensitivity on {} ({})\n\n", self.dataset, self.model);
        out.push_str("| fpr | achieved | f1 | mean call latency ms | calls |\n|---|---|---|---|---|\n");
        for l in &self.levels {
            out.push_str(&format!(
                "| {:.2} | {:.3} | {} | {:.1} | {} |\n",
                l.fpr, l.achieved_fpr.mean, l.f1, l.mean_call_latency_ms, l.calls
            ));
        }
        out
    }
}

/// Seed for one (case, level) draw, so adding levels or cases does not
/// shift the other draws.
fn draw_seed(base: u64, case: usize, level: usize) -> u64 {
    base ^ ((case as u64) << 32 | level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Classifies each case's ground truth plus sampled non-conflicting chunks
/// at every level of `cfg.fpr_levels`.
pub fn run_fpr_experiment(dataset: &Dataset, cfg: &FprExperimentConfig, gateway: &Gateway) -> Result<FprReport, BenchError> {
    cfg.validate()?;
    let text_of = |id: &ChunkId| dataset.chunks.iter().find(|c| &c.id == id).map(|c| c.text.as_str()).unwrap_or("");
    let mut report = FprReport {
        dataset: dataset.name.clone(),
        model: gateway.model().to_string(),
        rng_seed: cfg.rng_seed,
        levels: Vec::new(),
        skipped_cases: dataset
            .cases
            .iter()
            .filter(|c| c.ground_truth.is_empty())
            .map(|c| c.id.clone())
            .collect(),
        injected: Vec::new(),
    };
    for (li, &fpr) in cfg.fpr_levels.iter().enumerate() {
        let (mut f1s, mut achieved, mut latencies) = (Vec::new(), Vec::new(), Vec::new());
        let mut failures = 0;
        let mut short = Vec::new();
        for (ci, case) in dataset.cases.iter().enumerate() {
            if case.ground_truth.is_empty() {
                continue;
            }
            let negatives: Vec<&ChunkId> = dataset
                .chunk_ids()
                .filter(|id| !case.ground_truth.contains(*id) && Some(*id) != case.target.as_ref())
                .collect();
            let want = injected_count(case.ground_truth.len(), fpr);
            if want > negatives.len() {
                short.push(case.id.clone());
            }
            let k = want.min(negatives.len());
            let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(cfg.rng_seed, ci, li));
            let mut picks = rand::seq::index::sample(&mut rng, negatives.len(), k).into_vec();
            picks.sort_unstable();
            let injected: Vec<ChunkId> = picks.iter().map(|&i| negatives[i].clone()).collect();

            let input: Vec<ChunkId> = dataset
                .chunk_ids()
                .filter(|id| case.ground_truth.contains(*id) || injected.contains(id))
                .cloned()
                .collect();
            let texts: Vec<&str> = input.iter().map(text_of).collect();
            let outcomes = classify_all(&texts, &case.new_info, gateway, cfg.parallelism);
            let predicted: BTreeSet<ChunkId> = input
                .iter()
                .zip(&outcomes)
                .filter(|(_, o)| cfg.positive.is_positive(o.verdict.class))
                .map(|(id, _)| id.clone())
                .collect();
            f1s.push(compute_metrics(&predicted, &case.ground_truth, input.len()).f1);
            achieved.push(k as f64 / input.len() as f64);
            latencies.extend(outcomes.iter().map(|o| o.latency_ms));
            failures += outcomes.iter().filter(|o| o.provider_failed).count();
            report.injected.push((case.id.clone(), fpr, injected));
        }
        report.levels.push(FprLevelResult {
            fpr,
            achieved_fpr: summarize(achieved),
            f1: summarize(f1s),
            mean_call_latency_ms: summarize(latencies.iter().copied()).mean,
            calls: latencies.len(),
            provider_failures: failures,
            short_cases: short,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::synthetic::dataset;
    use super::*;
    use crate::llm::{HandlerProvider, TemplateName};

    #[test]
    fn injection_arithmetic() {
        assert_eq!(injected_count(2, 0.5), 2);
        assert_eq!(injected_count(1, 0.9), 9);
        assert_eq!(injected_count(4, 0.0), 0);
        assert_eq!(injected_count(3, 0.5), 3);
        assert_eq!(injected_count(0, 0.9), 0);
    }

    #[test]
    fn injection_is_closest() {
        for truth in 1..30 {
            for step in 0..99 {
                let f = step as f64 / 100.0;
                let k = injected_count(truth, f);
                let err = |k: usize| (k as f64 / (k + truth) as f64 - f).abs();
                for other in 0..(100 * truth) {
                    assert!(err(k) <= err(other) + 1e-12, "truth={truth} f={f} k={k} other={other}");
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        FprExperimentConfig::default().validate().unwrap();
        for levels in [vec![], vec![0.5, 0.1], vec![1.0], vec![-0.1]] {
            let cfg = FprExperimentConfig {
                fpr_levels: levels,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
    }

    fn yes_for(ds: &Dataset) -> Gateway {
        let pairs: BTreeSet<(String, String)> = ds
            .cases
            .iter()
            .flat_map(|case| {
                case.ground_truth
                    .iter()
                    .map(|id| (ds.chunks.iter().find(|c| &c.id == id).unwrap().text.clone(), case.new_info.clone()))
            })
            .collect();
        Gateway::new(HandlerProvider::new("oracle", move |req| {
            assert_eq!(req.template, TemplateName::ConflictClassify);
            let hit = pairs.contains(&(req.vars["existing_info"].clone(), req.vars["new_info"].clone()));
            Ok(serde_json::json!({"reasoning": "r", "is_conflicting": if hit { "yes" } else { "no" }}).to_string())
        }))
    }

    #[test]
    fn levels_inject_and_stay_reproducible() {
        let ds = dataset("toy", 20, &[&[0, 1], &[5], &[]]);
        let gw = yes_for(&ds);
        let cfg = FprExperimentConfig::default();
        let a = run_fpr_experiment(&ds, &cfg, &gw).unwrap();
        assert_eq!(a.skipped_cases, ["m2"]);
        assert_eq!(a.levels.len(), 3);
        assert_eq!(a.levels[0].calls, 3);
        assert_eq!(a.levels[1].calls, 4 + 2);
        assert_eq!(a.levels[2].calls, 20 + 10);
        for l in &a.levels {
            assert_eq!(l.f1.mean, 1.0);
            assert!((l.achieved_fpr.mean - l.fpr).abs() < 1e-9);
        }
        let b = run_fpr_experiment(&ds, &cfg, &gw).unwrap();
        assert_eq!(a.injected, b.injected);
        let c = run_fpr_experiment(&ds, &FprExperimentConfig { rng_seed: 7, ..cfg }, &gw).unwrap();
        assert_ne!(a.injected, c.injected);
        for (case, _, inj) in &a.injected {
            let truth = &ds.cases.iter().find(|c| &c.id == case).unwrap().ground_truth;
            assert!(inj.iter().all(|id| !truth.contains(id)));
            assert_eq!(inj.iter().collect::<BTreeSet<_>>().len(), inj.len());
        }
    }

    #[test]
    fn short_supply_uses_everything() {
        let ds = dataset("toy", 4, &[&[0]]);
        let gw = yes_for(&ds);
        let r = run_fpr_experiment(&ds, &FprExperimentConfig::default(), &gw).unwrap();
        let top = &r.levels[2];
        assert_eq!(top.short_cases, ["m0"]);
        assert_eq!(top.calls, 4);
        assert!((top.achieved_fpr.mean - 0.75).abs() < 1e-12);
        assert!(r.to_markdown().contains("| 0.90 | 0.750 |"));
    }
}
