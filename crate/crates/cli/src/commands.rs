//! Argument parsing and the subcommands.

use std::fs;
use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use semcommit_core::bench::{
    comparison_markdown, load_benchmark, run_fpr_experiment, run_method, BenchConfig, FprExperimentConfig, Method,
    MetricsReport, PositiveClass,
};
use semcommit_core::engine::{check_for_conflicts, make_change, ChangeOutcome, Flag, ProposalKind};
use semcommit_core::llm::{PromptCatalog, ScriptedProvider};
use semcommit_core::store::ChunkEvent;
use semcommit_core::{
    Action, ChangeRequest, ChunkId, ChunkState, ConflictClass, EngineConfig, Gateway, GatewayError, IntentSpec, Parallelism,
};
use tracing::info;

use crate::error::{CliError, EXIT_CONFLICTS, EXIT_OK, EXIT_PROVIDER};
use crate::files::{write_atomic, SpecFiles};

#[derive(Debug, Parser)]
#[command(name = "semcommit", version, about = "Check and integrate changes to an intent specification")]
pub struct Cli {
    /// Replay model responses from a fixture file instead of calling a provider.
    #[arg(long, global = true, env = "SEMCOMMIT_FIXTURES", value_name = "PATH")]
    pub fixtures: Option<PathBuf>,
    /// Model name sent to the provider (default: LLM_MODEL or gpt-4o).
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Directory of prompt overrides named like `crates/core/prompts` (e.g. `conflict_classify.system.txt`).
    #[arg(long, global = true, value_name = "DIR")]
    pub prompts: Option<PathBuf>,
    /// Make model calls one at a time.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the knowledge graph for a spec file.
    Init { spec: PathBuf },
    /// Report chunks that conflict with new information. Writes nothing.
    Check {
        #[command(flatten)]
        change: ChangeArgs,
        /// Print the full detection report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Propose edits for a change, or commit pending proposals with --yes.
    Apply {
        #[command(flatten)]
        change: OptionalChange,
        /// Accept every proposal and write the spec file.
        #[arg(long, short)]
        yes: bool,
    },
    /// Append a chunk to the spec without any check.
    Add { spec: PathBuf, text: String },
    /// Undo pending proposals, or the last committed apply.
    Revert {
        spec: PathBuf,
        #[arg(long, conflicts_with = "chunk", required_unless_present = "chunk")]
        all: bool,
        #[arg(long, value_name = "ID")]
        chunk: Option<String>,
    },
    /// Run detection methods over a benchmark dataset.
    Bench(BenchArgs),
    /// Serve the JSON API for one spec file.
    Serve {
        spec: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: SocketAddr,
        /// Keep all changes in memory.
        #[arg(long)]
        no_persist: bool,
    },
}

#[derive(Debug, Args)]
pub struct ChangeArgs {
    pub spec: PathBuf,
    #[arg(long, default_value = "add")]
    pub action: Action,
    #[arg(long)]
    pub new_info: String,
    /// Chunk being edited (edits only).
    #[arg(long, value_name = "ID")]
    pub target: Option<String>,
    #[arg(long)]
    pub steer: Option<String>,
    /// Answer to a clarifying question about the change.
    #[arg(long)]
    pub clarification: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptionalChange {
    pub spec: PathBuf,
    #[arg(long, default_value = "add")]
    pub action: Action,
    #[arg(long)]
    pub new_info: Option<String>,
    #[arg(long, value_name = "ID")]
    pub target: Option<String>,
    #[arg(long)]
    pub steer: Option<String>,
    #[arg(long)]
    pub clarification: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated: kg_pagerank, drop_all_docs, inksync.
    #[arg(long, value_delimiter = ',', required = true)]
    pub method: Vec<Method>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Verdicts counted as predicted conflicts: any or direct_only.
    #[arg(long, default_value = "any")]
    pub positive: PositiveClass,
    /// Run cases concurrently (latencies are then not comparable).
    #[arg(long)]
    pub parallel: bool,
    /// Also run the false-positive-rate experiment.
    #[arg(long)]
    pub fpr: bool,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.9")]
    pub fpr_levels: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn request(
    action: Action,
    new_info: String,
    target: Option<&str>,
    steer: Option<&str>,
    clarification: Option<&str>,
) -> ChangeRequest {
    ChangeRequest {
        action,
        new_info,
        target: target.map(ChunkId::new),
        steer: steer.map(str::to_string),
        clarification: clarification.map(str::to_string),
    }
}

impl ChangeArgs {
    fn request(&self) -> ChangeRequest {
        request(
            self.action,
            self.new_info.clone(),
            self.target.as_deref(),
            self.steer.as_deref(),
            self.clarification.as_deref(),
        )
    }
}

impl Cli {
    pub fn mode(&self) -> Parallelism {
        if self.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::default()
        }
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            parallelism: self.mode(),
            ..Default::default()
        }
    }

    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let mut gw = match &self.fixtures {
            // A bad fixture file is an input problem, not a provider failure.
            Some(path) => Gateway::new(ScriptedProvider::from_file(path).map_err(|e| match e {
                GatewayError::NotConfigured(m) => CliError::Format(m),
                other => CliError::Format(other.to_string()),
            })?),
            None => Gateway::live_from_env()?,
        };
        if let Some(m) = &self.model {
            gw = gw.with_model(m.clone());
        }
        if let Some(dir) = &self.prompts {
            let catalog = PromptCatalog::with_overrides(dir).map_err(|e| CliError::Format(e.to_string()))?;
            gw = gw.with_catalog(catalog);
        }
        Ok(gw)
    }

    pub fn execute(&self) -> Result<u8, CliError> {
        match &self.command {
            Command::Init { spec } => self.init(spec),
            Command::Check { change, json } => self.check(change, *json),
            Command::Apply { change, yes } => self.apply(change, *yes),
            Command::Add { spec, text } => self.add(spec, text),
            Command::Revert { spec, all, chunk } => revert(spec, *all, chunk.as_deref()),
            Command::Bench(args) => self.bench(args),
            Command::Serve { spec, addr, no_persist } => self.serve(spec, *addr, !no_persist),
        }
    }

    fn init(&self, spec: &Path) -> Result<u8, CliError> {
        let files = SpecFiles::new(spec);
        let gw = self.gateway()?;
        let loaded = files.read_spec()?;
        let mut graph = semcommit_core::KnowledgeGraph::induce(&loaded, &gw, self.mode());
        let warnings = graph.take_warnings();
        report_warnings(&warnings);
        files.write_graph(&graph)?;
        eprintln!(
            "{}: {} entities, {} relations over {} chunks",
            files.graph_path().display(),
            graph.node_count(),
            graph.edge_count(),
            loaded.len()
        );
        Ok(EXIT_OK)
    }

    fn check(&self, args: &ChangeArgs, json: bool) -> Result<u8, CliError> {
        let files = SpecFiles::new(&args.spec);
        let gw = self.gateway()?;
        let mut loaded = files.load()?;
        report_warnings(&loaded.warnings);
        let (graph, warnings) = files.load_graph(&loaded.spec, &gw, self.mode());
        report_warnings(&warnings);
        let report = check_for_conflicts(&mut loaded.spec, &graph, &args.request(), &gw, &self.engine_config())?;
        report_warnings(&report.warnings);

        let mut out = std::io::stdout().lock();
        if json {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        } else {
            let color = color_enabled();
            for flag in &report.flags {
                let text = loaded.spec.get(&flag.chunk_id).map(|c| c.text()).unwrap_or_default();
                let _ = writeln!(out, "{}", flag_line(flag, text, color));
            }
        }
        let direct = report.direct_count();
        eprintln!(
            "{} flagged ({} direct, {} ambiguous) among {} candidates",
            report.flags.len(),
            direct,
            report.flags.len() - direct,
            report.candidates.len()
        );
        Ok(if report.provider_failures > 0 {
            eprintln!("{} classifier call(s) failed", report.provider_failures);
            EXIT_PROVIDER
        } else if direct > 0 {
            EXIT_CONFLICTS
        } else {
            EXIT_OK
        })
    }

    fn apply(&self, args: &OptionalChange, yes: bool) -> Result<u8, CliError> {
        let files = SpecFiles::new(&args.spec);
        let gw = self.gateway()?;
        let mut loaded = files.load()?;
        report_warnings(&loaded.warnings);
        let Some(new_info) = args.new_info.clone() else {
            if !yes {
                return Err(CliError::Usage("apply needs --new-info, or --yes to commit pending proposals".into()));
            }
            if !loaded.from_review {
                return Err(CliError::Usage("nothing pending to commit".into()));
            }
            return self.commit(&files, loaded.spec, &gw);
        };
        let req = request(
            args.action,
            new_info,
            args.target.as_deref(),
            args.steer.as_deref(),
            args.clarification.as_deref(),
        );
        let (graph, warnings) = files.load_graph(&loaded.spec, &gw, self.mode());
        report_warnings(&warnings);
        let outcome = make_change(&mut loaded.spec, &graph, &req, &gw, &self.engine_config())?;
        report_warnings(&outcome.report.warnings);
        print_outcome(&outcome, &loaded.spec);

        let failed = outcome.report.provider_failures > 0 || outcome.rewrite_error.is_some();
        if let Some(e) = &outcome.rewrite_error {
            eprintln!("rewrite failed: {e}");
        }
        if yes && !failed {
            return self.commit(&files, loaded.spec, &gw);
        }
        files.persist(&loaded.spec, Some(&graph))?;
        if !outcome.proposals.is_empty() || !outcome.report.flags.is_empty() {
            eprintln!(
                "review pending in {}; run `semcommit apply {} --yes` to accept",
                files.review_path().display(),
                files.spec_path().display()
            );
        }
        Ok(if failed { EXIT_PROVIDER } else { EXIT_OK })
    }

    /// Accepts every proposal and every remaining flag, then writes the
    /// spec file, keeping the old one for `revert --all`.
    fn commit(&self, files: &SpecFiles, mut spec: IntentSpec, gw: &Gateway) -> Result<u8, CliError> {
        let before = crate::files::read(files.spec_path())?;
        // Resolving a flagged chunk with no proposal accepts it as is.
        let pending: Vec<ChunkId> = spec
            .chunks()
            .iter()
            .filter(|c| c.state() != ChunkState::Neutral)
            .map(|c| c.id().clone())
            .collect();
        for id in &pending {
            spec.transition(id, ChunkEvent::Resolve)?;
        }
        let (mut graph, _) = files.load_graph(&spec, gw, self.mode());
        graph.sync(&spec, gw);
        report_warnings(&graph.take_warnings());
        write_atomic(&files.prev_path(), &before)?;
        let written = files.persist(&spec, Some(&graph))?;
        eprintln!(
            "accepted {} change(s){}",
            pending.len(),
            if written.spec_written { "" } else { "; committed text unchanged" }
        );
        Ok(EXIT_OK)
    }

    fn add(&self, spec: &Path, text: &str) -> Result<u8, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Usage("chunk text must not be empty".into()));
        }
        let files = SpecFiles::new(spec);
        let gw = self.gateway()?;
        let mut loaded = files.load()?;
        report_warnings(&loaded.warnings);
        let (mut graph, warnings) = files.load_graph(&loaded.spec, &gw, self.mode());
        report_warnings(&warnings);
        let id = loaded.spec.add_chunk(text.trim());
        graph.update_for_chunk(&id, text.trim(), &gw);
        report_warnings(&graph.take_warnings());
        files.persist(&loaded.spec, Some(&graph))?;
        println!("{id}");
        Ok(EXIT_OK)
    }

    fn bench(&self, args: &BenchArgs) -> Result<u8, CliError> {
        let dataset = load_benchmark(&args.dataset)?;
        let gw = self.gateway()?;
        let stem = args
            .dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dataset.name.clone());
        fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
        let case_parallelism = if args.parallel { Parallelism::Parallel } else { Parallelism::Sequential };
        let cfg = BenchConfig {
            engine: self.engine_config(),
            positive: args.positive,
            case_parallelism,
        };

        let mut reports: Vec<MetricsReport> = Vec::new();
        let mut all_failed = false;
        for &method in &args.method {
            info!(%method, dataset = %dataset.name, "running benchmark");
            let report = run_method(method, &dataset, &gw, &cfg);
            write_report(&args.out_dir, &stem, method.as_str(), &report.to_json(), &report.to_markdown())?;
            let s = &report.summary;
            eprintln!(
                "{method}: precision {} recall {} f1 {} over {} case(s), {} failed",
                s.precision,
                s.recall,
                s.f1,
                report.cases.len(),
                report.failed_cases
            );
            all_failed |= !report.cases.is_empty() && report.failed_cases == report.cases.len();
            reports.push(report);
        }
        if reports.len() > 1 {
            let path = args.out_dir.join(format!("{stem}.comparison.md"));
            write_atomic(&path, comparison_markdown(&reports).as_bytes())?;
        }
        let mut fpr_failed = false;
        if args.fpr {
            let fcfg = FprExperimentConfig {
                fpr_levels: args.fpr_levels.clone(),
                rng_seed: args.seed,
                positive: args.positive,
                parallelism: self.mode(),
            };
            let report = run_fpr_experiment(&dataset, &fcfg, &gw)?;
            write_report(&args.out_dir, &stem, "fpr", &report.to_json(), &report.to_markdown())?;
            let failures: usize = report.levels.iter().map(|l| l.provider_failures).sum();
            if failures > 0 {
                eprintln!("fpr: {failures} classifier call(s) failed");
            }
            fpr_failed = failures > 0;
        }
        Ok(if all_failed || fpr_failed { EXIT_PROVIDER } else { EXIT_OK })
    }

    fn serve(&self, spec: &Path, addr: SocketAddr, persist: bool) -> Result<u8, CliError> {
        let files = SpecFiles::new(spec);
        let gw = self.gateway()?;
        let loaded = files.load()?;
        report_warnings(&loaded.warnings);
        let (graph, warnings) = files.load_graph(&loaded.spec, &gw, self.mode());
        report_warnings(&warnings);
        if persist {
            files.write_graph(&graph)?;
        }
        let session = crate::server::Session {
            spec: loaded.spec,
            graph,
            gateway: gw,
            config: self.engine_config(),
            files: persist.then_some(files),
            last_request: None,
            pending_clarification: None,
        };
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start runtime: {e}")))?;
        runtime.block_on(crate::server::serve(session, addr))?;
        Ok(EXIT_OK)
    }
}

fn revert(spec: &Path, all: bool, chunk: Option<&str>) -> Result<u8, CliError> {
    let files = SpecFiles::new(spec);
    let mut loaded = files.load()?;
    report_warnings(&loaded.warnings);
    if loaded.from_review {
        match chunk {
            Some(id) => {
                loaded.spec.transition(&ChunkId::new(id), ChunkEvent::Revert)?;
            }
            None => {
                loaded.spec.revert_all();
                loaded.spec.clear_all_conflicts();
            }
        }
        files.persist(&loaded.spec, None)?;
        eprintln!("reverted pending review");
        return Ok(EXIT_OK);
    }
    if let Some(id) = chunk {
        return Err(CliError::Usage(format!("chunk `{id}` has no pending proposal")));
    }
    debug_assert!(all);
    let prev = files.prev_path();
    if !prev.exists() {
        return Err(CliError::Usage("nothing to revert".into()));
    }
    let bytes = crate::files::read(&prev)?;
    write_atomic(files.spec_path(), &bytes)?;
    fs::remove_file(&prev).map_err(|e| CliError::io(&prev, e))?;
    eprintln!("restored {} from before the last apply", files.spec_path().display());
    Ok(EXIT_OK)
}

fn write_report(dir: &Path, stem: &str, label: &str, json: &str, markdown: &str) -> Result<(), CliError> {
    let json_path = dir.join(format!("{stem}.{label}.json"));
    write_atomic(&json_path, (json.to_string() + "\n").as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.{label}.md")), markdown.as_bytes())?;
    eprintln!("wrote {}", json_path.display());
    Ok(())
}

fn report_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn color_enabled() -> bool {
    std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal()
}

const RED: &str = "\x1b[31m";
const PINK: &str = "\x1b[95m";
const RESET: &str = "\x1b[0m";

/// `[direct] c6: <text> (<reasoning>)`, tag colored red or pink.
pub fn flag_line(flag: &Flag, text: &str, color: bool) -> String {
    let tag = format!("[{}]", flag.class);
    let tag = match (color, flag.class) {
        (true, ConflictClass::Direct) => format!("{RED}{tag}{RESET}"),
        (true, _) => format!("{PINK}{tag}{RESET}"),
        (false, _) => tag,
    };
    format!("{tag} {}: {text} ({})", flag.chunk_id, flag.reasoning)
}

fn print_outcome(outcome: &ChangeOutcome, spec: &IntentSpec) {
    let mut out = std::io::stdout().lock();
    for p in &outcome.proposals {
        let line = match p.kind {
            ProposalKind::Edit => format!("edit   {}: {}", p.chunk_id, p.text),
            ProposalKind::Delete => format!(
                "delete {}: {}",
                p.chunk_id,
                spec.get(&p.chunk_id).map(|c| c.text()).unwrap_or_default()
            ),
            ProposalKind::Add => format!("add    {}: {}", p.chunk_id, p.text),
        };
        let _ = writeln!(out, "{line}");
    }
    for id in &outcome.kept {
        let _ = writeln!(out, "keep   {id}");
    }
}
