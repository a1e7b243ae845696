mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;

use common::Scenario;
use semcommit_core::engine::{check_for_conflicts, make_change, ProposalKind};
use semcommit_core::llm::{GatewayError, HandlerProvider, TemplateName};
use semcommit_core::store::{ChunkEvent, Origin};
use semcommit_core::{ChunkId, ChunkState, EngineConfig, Gateway, IntentSpec, KnowledgeGraph, Parallelism, PprConfig};

#[derive(Debug, Clone)]
enum Op {
    Flag(usize, bool),
    Edit(usize, u8),
    Delete(usize),
    Add(u8),
    Resolve(usize),
    Revert(usize),
    Clear(usize),
    RevertAll,
    ClearAll,
    Snapshot,
    Restore(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<usize>(), any::<bool>()).prop_map(|(i, d)| Op::Flag(i, d)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, t)| Op::Edit(i, t)),
        any::<usize>().prop_map(Op::Delete),
        any::<u8>().prop_map(Op::Add),
        any::<usize>().prop_map(Op::Resolve),
        any::<usize>().prop_map(Op::Revert),
        any::<usize>().prop_map(Op::Clear),
        Just(Op::RevertAll),
        Just(Op::ClearAll),
        Just(Op::Snapshot),
        any::<usize>().prop_map(Op::Restore),
    ]
}

fn nth(spec: &IntentSpec, i: usize) -> Option<ChunkId> {
    (!spec.is_empty()).then(|| spec.chunks()[i % spec.len()].id().clone())
}

/// Applies `op`; an illegal transition must leave the spec untouched.
fn apply(spec: &mut IntentSpec, op: &Op) {
    let event = |spec: &IntentSpec, i: usize, e: ChunkEvent| nth(spec, i).map(|id| (id, e));
    let step = match op {
        Op::Flag(i, true) => event(spec, *i, ChunkEvent::FlagDirect { reasoning: "r".into() }),
        Op::Flag(i, false) => event(spec, *i, ChunkEvent::FlagAmbiguous { reasoning: "r".into() }),
        Op::Edit(i, t) => event(
            spec,
            *i,
            ChunkEvent::ProposeEdit {
                text: format!("edited {t}"),
                origin: Origin::Ai,
            },
        ),
        Op::Delete(i) => event(spec, *i, ChunkEvent::ProposeDelete { origin: Origin::User }),
        Op::Resolve(i) => event(spec, *i, ChunkEvent::Resolve),
        Op::Revert(i) => event(spec, *i, ChunkEvent::Revert),
        Op::Clear(i) => event(spec, *i, ChunkEvent::Clear),
        Op::Add(t) => {
            spec.propose_add(format!("added {t}"), Origin::Ai);
            None
        }
        Op::RevertAll => {
            spec.revert_all();
            None
        }
        Op::ClearAll => {
            spec.clear_all_conflicts();
            None
        }
        Op::Snapshot => {
            spec.snapshot(None);
            None
        }
        Op::Restore(k) => {
            let revs: Vec<u64> = spec.snapshots().iter().map(|s| s.revision).collect();
            spec.restore(revs[k % revs.len()]).unwrap();
            None
        }
    };
    if let Some((id, e)) = step {
        let before = spec.clone();
        if spec.transition(&id, e).is_err() {
            assert_eq!(*spec, before, "failed transition mutated the spec");
        }
    }
}

fn base() -> IntentSpec {
    IntentSpec::from_texts(["Alpha rule.", "Beta rule.", "Gamma rule.", "Delta rule.", "Epsilon rule."])
}

fn owned(spec: &IntentSpec) -> Vec<String> {
    spec.committed_texts().iter().map(|s| s.to_string()).collect()
}

/// Entities are the capitalised words of a text, chained in order.
fn word_graph_gateway() -> Gateway {
    Gateway::new(HandlerProvider::new("words", |req| match req.template {
        TemplateName::EntityExtract => {
            let words: Vec<String> = req.vars["text"]
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| w.chars().next().is_some_and(char::is_uppercase))
                .map(str::to_string)
                .collect();
            let triples: Vec<[&str; 3]> = words.windows(2).map(|w| [w[0].as_str(), "next to", w[1].as_str()]).collect();
            Ok(serde_json::json!({"entities": words, "triples": triples}).to_string())
        }
        other => Err(GatewayError::NotConfigured(other.as_str().into())),
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn store_invariants_hold_and_replay_reconstructs(ops in proptest::collection::vec(op(), 0..40)) {
        let mut spec = base();
        for o in &ops {
            apply(&mut spec, o);
            spec.check_invariants().map_err(TestCaseError::fail)?;
            let ordinals: Vec<usize> = spec.chunks().iter().map(|c| c.ordinal()).collect();
            prop_assert_eq!(ordinals, (0..spec.len()).collect::<Vec<_>>());
        }
        let replayed = spec.replay_from_start().unwrap();
        prop_assert_eq!(replayed.chunks(), spec.chunks());
    }

    #[test]
    fn revert_all_undoes_any_proposals(
        setup in proptest::collection::vec(op(), 0..15),
        proposals in proptest::collection::vec(
            prop_oneof![
                (any::<usize>(), any::<bool>()).prop_map(|(i, d)| Op::Flag(i, d)),
                (any::<usize>(), any::<u8>()).prop_map(|(i, t)| Op::Edit(i, t)),
                any::<usize>().prop_map(Op::Delete),
                any::<u8>().prop_map(Op::Add),
            ],
            0..25,
        ),
    ) {
        let mut spec = base();
        for o in &setup {
            apply(&mut spec, o);
        }
        spec.revert_all();
        let before = owned(&spec);
        for o in &proposals {
            apply(&mut spec, o);
        }
        spec.revert_all();
        prop_assert_eq!(owned(&spec), before);
        prop_assert!(spec.chunks().iter().all(|c| !c.state().is_proposed()));
    }

    #[test]
    fn graph_mentions_follow_the_spec(ops in proptest::collection::vec(op(), 0..30)) {
        let gw = word_graph_gateway();
        let mut spec = IntentSpec::from_texts(["Ida meets Ludo.", "Ludo guards Gate.", "Gate opens at Dawn.", "Music is Quiet."]);
        let mut graph = KnowledgeGraph::induce(&spec, &gw, Parallelism::Sequential);
        for o in &ops {
            let o = match o {
                Op::Edit(i, t) => Op::Edit(*i, t % 4),
                other => other.clone(),
            };
            apply(&mut spec, &o);
            if matches!(o, Op::Resolve(_) | Op::Restore(_)) {
                graph.sync(&spec, &gw);
            }
        }
        graph.sync(&spec, &gw);
        graph.check_consistency(&spec).map_err(TestCaseError::fail)?;
        let fresh = KnowledgeGraph::induce(&spec, &gw, Parallelism::Sequential);
        prop_assert_eq!(graph.structure(), fresh.structure());
    }
}

fn class_token(k: u8) -> &'static str {
    ["yes", "ambiguous", "no", "garbage"][k as usize % 4]
}

/// Scenario gateway with randomised verdicts and rewrite items.
fn random_world(verdicts: Vec<u8>, items: Vec<u8>) -> (IntentSpec, KnowledgeGraph, Gateway) {
    let scenario = Scenario::load();
    let extractions: BTreeMap<String, String> = scenario
        .chunks
        .iter()
        .map(|c| (c.text.clone(), c.extraction.to_string()))
        .chain(scenario.requests.iter().map(|r| (r.new_info.clone(), r.extraction.to_string())))
        .collect();
    let by_text: BTreeMap<String, usize> = scenario.chunks.iter().enumerate().map(|(i, c)| (c.text.clone(), i)).collect();
    let items = Arc::new(items);
    let gw = Gateway::new(HandlerProvider::new("random", move |req| match req.template {
        TemplateName::EntityExtract => Ok(extractions.get(&req.vars["text"]).cloned().unwrap_or_else(|| r#"{"entities":[]}"#.into())),
        TemplateName::ConflictClassify => {
            let i = by_text[&req.vars["existing_info"]];
            let token = class_token(verdicts[i]);
            Ok(if token == "garbage" {
                "I cannot decide.".to_string()
            } else {
                serde_json::json!({"reasoning": format!("because {i}"), "is_conflicting": token}).to_string()
            })
        }
        TemplateName::GlobalRewrite => {
            let docs: Vec<&str> = req.vars["all_docs"].lines().collect();
            let out: Vec<String> = docs
                .iter()
                .enumerate()
                .map(|(k, line)| {
                    let original = line.split_once(". ").map(|(_, t)| t).unwrap_or(line);
                    match items[k % items.len()] % 3 {
                        0 => format!("{}. DELETE", k + 1),
                        1 => format!("{}. {original}", k + 1),
                        _ => format!("{}. {original} Revised.", k + 1),
                    }
                })
                .collect();
            Ok(out.join("\n"))
        }
        other => Err(GatewayError::NotConfigured(other.as_str().into())),
    }));
    let spec = scenario.spec();
    let graph = KnowledgeGraph::induce(&spec, &gw, Parallelism::Sequential);
    (spec, graph, gw)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detection_and_change_respect_untouched_chunks(
        verdicts in proptest::collection::vec(0u8..4, 10),
        items in proptest::collection::vec(any::<u8>(), 1..6),
        request in 0usize..2,
    ) {
        let scenario = Scenario::load();
        let req = scenario.requests[request].change_request();
        let cfg = EngineConfig::default();

        let (mut spec, graph, gw) = random_world(verdicts.clone(), items.clone());
        let before: Vec<(String, Option<String>)> = spec.chunks().iter().map(|c| (c.text().to_string(), c.proposed_text().map(str::to_string))).collect();
        let report = check_for_conflicts(&mut spec, &graph, &req, &gw, &cfg).unwrap();
        let after: Vec<(String, Option<String>)> = spec.chunks().iter().map(|c| (c.text().to_string(), c.proposed_text().map(str::to_string))).collect();
        prop_assert_eq!(before, after);
        for c in spec.chunks().iter().filter(|c| c.state().is_flagged()) {
            prop_assert!(!c.verdict().unwrap().reasoning.is_empty());
        }

        let (mut spec, graph, gw) = random_world(verdicts, items);
        let original = owned(&spec);
        let candidates: BTreeSet<ChunkId> = report.candidates.iter().map(|c| c.chunk_id.clone()).collect();
        let out = make_change(&mut spec, &graph, &req, &gw, &cfg).unwrap();
        let touched: BTreeSet<ChunkId> = out.report.flags.iter().map(|f| f.chunk_id.clone()).collect();
        prop_assert!(touched.is_subset(&candidates));
        prop_assert!(out.proposals.iter().filter(|p| p.kind == ProposalKind::Add).count() <= 1);
        for (i, c) in spec.chunks().iter().enumerate().take(original.len()) {
            if !touched.contains(c.id()) {
                prop_assert_eq!(c.text(), original[i].as_str());
                prop_assert_eq!(c.state(), ChunkState::Neutral);
            }
        }
    }
}

#[test]
fn small_damping_concentrates_on_seeds() {
    let (_, graph, _) = Scenario::load().world();
    let cfg = PprConfig {
        damping: 0.01,
        ..PprConfig::default()
    };
    for seed in graph.nodes().map(|n| n.id.clone()).collect::<Vec<_>>() {
        let r = graph.personalized_pagerank(&BTreeSet::from([seed.clone()]), &cfg).unwrap();
        let total: f64 = r.scores.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (id, s) in &r.scores {
            assert!(*s >= 0.0);
            if *id != seed {
                assert!(*s < 0.02, "{id} scored {s} with seed {seed}");
            }
        }
    }
}

#[test]
fn converged_scores_are_distributions() {
    let (_, graph, _) = Scenario::load().world();
    let ids: Vec<String> = graph.nodes().map(|n| n.id.clone()).collect();
    for pair in ids.windows(2) {
        let seeds: BTreeSet<String> = pair.iter().cloned().collect();
        let r = graph
            .personalized_pagerank(&seeds, &PprConfig {
                max_iters: 1000,
                ..PprConfig::default()
            })
            .unwrap();
        assert!(r.converged);
        assert!((r.scores.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.scores.values().all(|s| *s >= 0.0));
    }
}
