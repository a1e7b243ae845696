//! Personalized PageRank over an undirected simple graph.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub top_k: usize,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-8,
            max_iters: 100,
            top_k: 20,
        }
    }
}

impl PprConfig {
    pub fn validate(&self) -> Result<(), PprError> {
        let bad = |what: &str| Err(PprError::InvalidConfig(what.to_string()));
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad("damping must lie in (0, 1)");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PprError {
    #[error("invalid PageRank config: {0}")]
    InvalidConfig(String),
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("seed `{0}` is not a node of the graph")]
    UnknownSeed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprResult {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for `r = (1-d)·v + d·M·r`.
///
/// `adjacency[i]` lists the neighbours of node `i`; it must be symmetric and
/// free of duplicates and self-loops. `v` is uniform over `seeds`. The mass
/// of nodes without neighbours is sent back to `v`, which keeps the operator
/// stochastic.
pub fn personalized(adjacency: &[Vec<usize>], seeds: &[usize], cfg: &PprConfig) -> Result<PprResult, PprError> {
    cfg.validate()?;
    let n = adjacency.len();
    let mut teleport = vec![0.0; n];
    let mut seed_count = 0usize;
    for &s in seeds {
        if s >= n {
            return Err(PprError::UnknownSeed(s.to_string()));
        }
        if teleport[s] == 0.0 {
            teleport[s] = 1.0;
            seed_count += 1;
        }
    }
    if seed_count == 0 {
        return Err(PprError::EmptySeeds);
    }
    for t in &mut teleport {
        *t /= seed_count as f64;
    }

    let d = cfg.damping;
    let mut r = teleport.clone();
    let mut next = vec![0.0; n];
    for iter in 1..=cfg.max_iters {
        let mut dangling = 0.0;
        next.iter_mut().for_each(|x| *x = 0.0);
        for (j, nbrs) in adjacency.iter().enumerate() {
            if nbrs.is_empty() {
                dangling += r[j];
                continue;
            }
            let share = r[j] / nbrs.len() as f64;
            for &i in nbrs {
                next[i] += share;
            }
        }
        let mut delta = 0.0;
        for i in 0..n {
            let value = (1.0 - d) * teleport[i] + d * (next[i] + dangling * teleport[i]);
            delta += (value - r[i]).abs();
            next[i] = value;
        }
        std::mem::swap(&mut r, &mut next);
        if delta < cfg.tol {
            return Ok(PprResult {
                scores: r,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(PprResult {
        scores: r,
        iterations: cfg.max_iters,
        converged: false,
    })
}

/// Symmetric, deduplicated adjacency lists from an undirected edge list.
/// Self-loops are dropped.
pub fn adjacency_from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        if a == b {
            continue;
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Dense linear-solve reference for tests.

    /// Solves `(I - d·M')r = (1-d)·v` by Gaussian elimination with partial
    /// pivoting, where `M'` is the transition matrix including the
    /// dangling-to-teleport columns.
    pub fn dense_ppr(adjacency: &[Vec<usize>], seeds: &[usize], d: f64) -> Vec<f64> {
        let n = adjacency.len();
        let mut v = vec![0.0; n];
        let uniq: std::collections::BTreeSet<usize> = seeds.iter().copied().collect();
        for &s in &uniq {
            v[s] = 1.0 / uniq.len() as f64;
        }
        let mut m = vec![vec![0.0; n]; n];
        for (j, nbrs) in adjacency.iter().enumerate() {
            if nbrs.is_empty() {
                for i in 0..n {
                    m[i][j] = v[i];
                }
            } else {
                for &i in nbrs {
                    m[i][j] += 1.0 / nbrs.len() as f64;
                }
            }
        }
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = if i == j { 1.0 } else { 0.0 } - d * m[i][j];
            }
            a[i][n] = (1.0 - d) * v[i];
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::oracle::dense_ppr;
    use super::*;

    #[test]
    fn config_validation() {
        assert!(PprConfig::default().validate().is_ok());
        for bad in [
            PprConfig { damping: 1.0, ..Default::default() },
            PprConfig { damping: 0.0, ..Default::default() },
            PprConfig { tol: 0.0, ..Default::default() },
            PprConfig { max_iters: 0, ..Default::default() },
            PprConfig { top_k: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn triangle_all_seeds_is_uniform() {
        let adj = adjacency_from_edges(3, [(0, 1), (1, 2), (2, 0)]);
        let r = personalized(&adj, &[0, 1, 2], &PprConfig::default()).unwrap();
        for s in r.scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_path_matches_closed_form() {
        // r_A = 0.15 + 0.85 r_B, r_B = 0.85 r_A  =>  r_A = 0.15 / (1 - 0.85^2)
        let adj = adjacency_from_edges(2, [(0, 1)]);
        let ra = 0.15 / (1.0 - 0.85 * 0.85);
        let r = personalized(&adj, &[0], &PprConfig::default()).unwrap();
        assert!((r.scores[0] - ra).abs() < 1e-6);
        assert!((r.scores[1] - 0.85 * ra).abs() < 1e-6);
        // A bipartite chain contracts at rate d, so 100 steps stop short of 1e-8.
        assert!(!r.converged);
        let long = PprConfig { max_iters: 1000, ..Default::default() };
        let r = personalized(&adj, &[0], &long).unwrap();
        assert!(r.converged);
        assert!((r.scores[0] - ra).abs() < 1e-8);
    }

    #[test]
    fn empty_seeds_rejected() {
        let adj = adjacency_from_edges(2, [(0, 1)]);
        assert_eq!(personalized(&adj, &[], &PprConfig::default()), Err(PprError::EmptySeeds));
        assert!(matches!(
            personalized(&adj, &[5], &PprConfig::default()),
            Err(PprError::UnknownSeed(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let adj = adjacency_from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let cfg = PprConfig {
            max_iters: 2,
            ..Default::default()
        };
        let r = personalized(&adj, &[0], &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
        assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isolated_seed_keeps_its_mass() {
        let adj = adjacency_from_edges(3, [(1, 2)]);
        let r = personalized(&adj, &[0], &PprConfig::default()).unwrap();
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.scores[1], 0.0);
    }

    fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<usize>)> {
        (1usize..=10).prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0..n, 0..n), 0..=20),
                proptest::collection::vec(0..n, 1..=n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_dense_solve((n, edges, seeds) in graph_strategy(), d in 0.05f64..0.95) {
            let adj = adjacency_from_edges(n, edges);
            let cfg = PprConfig { damping: d, tol: 1e-12, max_iters: 10_000, top_k: 20 };
            let r = personalized(&adj, &seeds, &cfg).unwrap();
            let want = dense_ppr(&adj, &seeds, d);
            for (a, b) in r.scores.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }

        #[test]
        fn scores_are_a_distribution((n, edges, seeds) in graph_strategy()) {
            let adj = adjacency_from_edges(n, edges);
            let r = personalized(&adj, &seeds, &PprConfig::default()).unwrap();
            prop_assert!(r.scores.iter().all(|&s| s >= 0.0));
            prop_assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn small_damping_concentrates_on_seeds((n, edges, seeds) in graph_strategy()) {
            let adj = adjacency_from_edges(n, edges);
            let cfg = PprConfig { damping: 0.01, ..Default::default() };
            let r = personalized(&adj, &seeds, &cfg).unwrap();
            for i in 0..n {
                if !seeds.contains(&i) {
                    prop_assert!(r.scores[i] < 0.02);
                }
            }
        }

        #[test]
        fn deterministic((n, edges, seeds) in graph_strategy()) {
            let adj = adjacency_from_edges(n, edges);
            let a = personalized(&adj, &seeds, &PprConfig::default()).unwrap();
            let b = personalized(&adj, &seeds, &PprConfig::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
