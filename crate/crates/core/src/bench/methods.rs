use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::metrics::{compute_metrics, summarize, Aggregate, CaseMetrics, PositiveClass, Summary};
use super::{BenchmarkCase, Dataset};
use crate::engine::{check_for_conflicts, Action, ChangeRequest, EngineConfig};
use crate::graph::KnowledgeGraph;
use crate::llm::parse::{parse_drop_all_docs, parse_edits_json};
use crate::llm::{vars, Gateway, TemplateName};
use crate::parallel::{self, Parallelism};
use crate::store::{ChunkId, IntentSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KgPagerank,
    DropAllDocs,
    Inksync,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::KgPagerank, Method::DropAllDocs, Method::Inksync];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::KgPagerank => "kg_pagerank",
            Method::DropAllDocs => "drop_all_docs",
            Method::Inksync => "inksync",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected kg_pagerank, drop_all_docs or inksync)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub engine: EngineConfig,
    pub positive: PositiveClass,
    /// How cases are scheduled. Sequential keeps latencies comparable.
    pub case_parallelism: Parallelism,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            positive: PositiveClass::Any,
            case_parallelism: Parallelism::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub action: Action,
    pub predicted: Vec<ChunkId>,
    pub ground_truth: Vec<ChunkId>,
    /// Absent for failed cases.
    pub metrics: Option<CaseMetrics>,
    /// Share of ground truth that retrieval surfaced (kg_pagerank only).
    pub retrieval_recall: Option<f64>,
    pub candidates: Option<usize>,
    pub latency_ms: f64,
    pub retrieval_latency_ms: Option<f64>,
    pub classification_latency_ms: Option<f64>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl CaseResult {
    fn new(case: &BenchmarkCase) -> Self {
        Self {
            case_id: case.id.clone(),
            action: case.action,
            predicted: Vec::new(),
            ground_truth: case.ground_truth.iter().cloned().collect(),
            metrics: None,
            retrieval_recall: None,
            candidates: None,
            latency_ms: 0.0,
            retrieval_latency_ms: None,
            classification_latency_ms: None,
            warnings: Vec::new(),
            error: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub method: Method,
    pub model: String,
    pub positive: PositiveClass,
    pub cases: Vec<CaseResult>,
    /// Over evaluated (non-failed) cases.
    pub summary: Aggregate,
    pub retrieval_recall: Option<Summary>,
    pub latency_ms: Summary,
    pub failed_cases: usize,
    pub warning_count: usize,
    pub graph_nodes: Option<usize>,
    pub graph_edges: Option<usize>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn evaluated(&self) -> impl Iterator<Item = &CaseMetrics> {
        self.cases.iter().filter_map(|c| c.metrics.as_ref())
    }

    /// One row per case plus a mean ± stddev footer.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("# {} on {} ({})\n\n", self.method, self.dataset, self.model);
        out.push_str("| case | tp | fp | fn | tn | accuracy | precision | recall | f1 | latency ms |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for c in &self.cases {
            match &c.metrics {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.1} |",
                        c.case_id, m.tp, m.fp, m.fn_, m.tn, m.accuracy, m.precision, m.recall, m.f1, c.latency_ms
                    );
                }
                None => {
                    let _ = writeln!(out, "| {} | failed | | | | | | | | {:.1} |", c.case_id, c.latency_ms);
                }
            }
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "| mean ± sd | | | | | {} | {} | {} | {} | {} |",
            s.accuracy, s.precision, s.recall, s.f1, self.latency_ms
        );
        let _ = writeln!(
            out,
            "\nEvaluated {} of {} cases; {} failed; {} warnings.",
            s.f1.n,
            self.cases.len(),
            self.failed_cases,
            self.warning_count
        );
        if let Some(r) = &self.retrieval_recall {
            let _ = writeln!(out, "Retrieval recall: {r}.");
        }
        out
    }
}

/// Accuracy, precision, recall and F1 side by side for several runs.
pub fn comparison_markdown(reports: &[MetricsReport]) -> String {
    let mut out = String::from("| method | dataset | model | accuracy | precision | recall | f1 | failed |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.method, r.dataset, r.model, s.accuracy, s.precision, s.recall, s.f1, r.failed_cases
        );
    }
    out
}

fn numbered(spec: &IntentSpec) -> String {
    spec.chunks()
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, c.text()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn baseline_vars(gateway: &Gateway, spec: &IntentSpec, case: &BenchmarkCase) -> crate::llm::Vars {
    vars([
        ("action_prompt", gateway.catalog().action_prompt(case.action).to_string()),
        ("all_docs", numbered(spec)),
        ("new_info", case.new_info.clone()),
    ])
}

/// Predicted chunk set for one case, or an error that marks it failed.
fn predict(
    method: Method,
    case: &BenchmarkCase,
    dataset: &Dataset,
    graph: Option<&KnowledgeGraph>,
    gateway: &Gateway,
    cfg: &BenchConfig,
    row: &mut CaseResult,
) -> Result<BTreeSet<ChunkId>, String> {
    let mut spec = dataset.spec();
    match method {
        Method::KgPagerank => {
            let graph = graph.expect("graph induced for kg_pagerank");
            let request = ChangeRequest {
                action: case.action,
                new_info: case.new_info.clone(),
                target: case.target.clone(),
                steer: None,
                clarification: None,
            };
            let report = check_for_conflicts(&mut spec, graph, &request, gateway, &cfg.engine).map_err(|e| e.to_string())?;
            row.warnings.extend(report.warnings.iter().cloned());
            row.candidates = Some(report.candidates.len());
            row.retrieval_latency_ms = Some(report.retrieval_latency_ms);
            row.classification_latency_ms = Some(report.classification_latency_ms);
            let surfaced: BTreeSet<&ChunkId> = report.candidates.iter().map(|c| &c.chunk_id).collect();
            row.retrieval_recall = Some(if case.ground_truth.is_empty() {
                1.0
            } else {
                case.ground_truth.iter().filter(|g| surfaced.contains(g)).count() as f64 / case.ground_truth.len() as f64
            });
            if report.classifier_calls > 0 && report.provider_failures == report.classifier_calls {
                return Err(format!("all {} classifier calls failed", report.classifier_calls));
            }
            Ok(report
                .verdicts
                .iter()
                .filter(|(_, v)| cfg.positive.is_positive(v.class))
                .map(|(id, _)| id.clone())
                .collect())
        }
        Method::DropAllDocs => {
            let resp = gateway
                .call(TemplateName::DropAllDocs, baseline_vars(gateway, &spec, case))
                .map_err(|e| e.to_string())?;
            let parsed = parse_drop_all_docs(&resp.text, spec.len());
            if !parsed.out_of_range.is_empty() {
                row.warnings.push(format!("ignored out-of-range ids {:?}", parsed.out_of_range));
            }
            Ok(parsed.ordinals.iter().map(|&o| spec.chunks()[o].id().clone()).collect())
        }
        Method::Inksync => {
            let resp = gateway
                .call(TemplateName::InksyncEdits, baseline_vars(gateway, &spec, case))
                .map_err(|e| e.to_string())?;
            let chunks: Vec<(&ChunkId, &str)> = spec.chunks().iter().map(|c| (c.id(), c.text())).collect();
            match parse_edits_json(&resp.text, &chunks) {
                Ok(edits) => Ok(edits.into_iter().map(|e| e.chunk_id).collect()),
                Err(e) => {
                    row.warnings.push(format!("unparseable edits, scored as no predictions: {e}"));
                    Ok(BTreeSet::new())
                }
            }
        }
    }
}

fn run_case(
    method: Method,
    case: &BenchmarkCase,
    dataset: &Dataset,
    graph: Option<&KnowledgeGraph>,
    gateway: &Gateway,
    cfg: &BenchConfig,
) -> CaseResult {
    let mut row = CaseResult::new(case);
    let started = Instant::now();
    let outcome = predict(method, case, dataset, graph, gateway, cfg, &mut row);
    row.latency_ms = started.elapsed().as_secs_f64() * 1000.0;
    match outcome {
        Ok(mut predicted) => {
            if let Some(t) = &case.target {
                predicted.remove(t);
            }
            let universe = dataset.chunks.len() - usize::from(case.target.is_some());
            row.metrics = Some(compute_metrics(&predicted, &case.ground_truth, universe));
            row.predicted = predicted.into_iter().collect();
        }
        Err(e) => {
            warn!(case = %case.id, method = %method, error = %e, "benchmark case failed");
            row.error = Some(e);
        }
    }
    row
}

/// Runs one detection method over every case of `dataset`. Failed cases are
/// reported but left out of the aggregates.
pub fn run_method(method: Method, dataset: &Dataset, gateway: &Gateway, cfg: &BenchConfig) -> MetricsReport {
    let mut graph_warnings = Vec::new();
    let graph = (method == Method::KgPagerank).then(|| {
        let mut g = KnowledgeGraph::induce(&dataset.spec(), gateway, cfg.engine.parallelism);
        graph_warnings = g.take_warnings();
        g
    });
    let cases = parallel::map(&dataset.cases, cfg.case_parallelism, |case| {
        run_case(method, case, dataset, graph.as_ref(), gateway, cfg)
    });
    let evaluated: Vec<&CaseMetrics> = cases.iter().filter_map(|c| c.metrics.as_ref()).collect();
    let summary = Aggregate::of(evaluated.iter().copied());
    let retrieval_recall = (method == Method::KgPagerank)
        .then(|| summarize(cases.iter().filter(|c| !c.failed()).filter_map(|c| c.retrieval_recall)));
    let failed_cases = cases.iter().filter(|c| c.failed()).count();
    let warning_count = graph_warnings.len() + cases.iter().map(|c| c.warnings.len() + usize::from(c.failed())).sum::<usize>();
    let report = MetricsReport {
        dataset: dataset.name.clone(),
        method,
        model: gateway.model().to_string(),
        positive: cfg.positive,
        latency_ms: summarize(cases.iter().map(|c| c.latency_ms)),
        summary,
        retrieval_recall,
        failed_cases,
        warning_count,
        graph_nodes: graph.as_ref().map(KnowledgeGraph::node_count),
        graph_edges: graph.as_ref().map(KnowledgeGraph::edge_count),
        cases,
    };
    info!(
        method = %method,
        dataset = %dataset.name,
        f1 = report.summary.f1.mean,
        failed = failed_cases,
        "benchmark run finished"
    );
    report
}
