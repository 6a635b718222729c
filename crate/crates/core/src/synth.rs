//! Seeded synthetic graphs for tests, bound checks and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, Split};
use crate::tensor::DenseMatrix;

/// Parameters of a two-block graph whose edges and features both leak the sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasedGraphSpec {
    pub nodes: usize,
    pub features: usize,
    /// Edge probability between nodes sharing the sensitive attribute.
    pub p_same: f64,
    /// Edge probability across sensitive groups.
    pub p_cross: f64,
    /// Probability that a label equals the sensitive attribute.
    pub label_bias: f64,
    /// Weight of the sensitive attribute in every feature column.
    pub feature_bias: f64,
}

impl Default for BiasedGraphSpec {
    fn default() -> Self {
        Self {
            nodes: 200,
            features: 8,
            p_same: 0.05,
            p_cross: 0.01,
            label_bias: 0.8,
            feature_bias: 0.5,
        }
    }
}

/// Samples a graph from `layout` with a half/quarter/quarter train/val/test split.
pub fn biased_graph(layout: &BiasedGraphSpec, rng: &mut impl Rng) -> Result<AttributedGraph> {
    let n = layout.nodes;
    if n < 8 {
        return Err(Error::Config(format!("synthetic graph needs at least 8 nodes, got {n}")));
    }
    for (name, p) in [
        ("p_same", layout.p_same),
        ("p_cross", layout.p_cross),
        ("label_bias", layout.label_bias),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    let sensitive: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let labels: Vec<u8> = sensitive
        .iter()
        .map(|&s| if rng.gen_bool(layout.label_bias) { s } else { 1 - s })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if sensitive[i] == sensitive[j] { layout.p_same } else { layout.p_cross };
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let features = DenseMatrix::from_fn(n, layout.features.max(1), |i, j| {
        let signal = if j % 2 == 0 { labels[i] as f64 } else { sensitive[i] as f64 };
        let weight = if j % 2 == 0 { 1.0 - layout.feature_bias } else { layout.feature_bias };
        weight * signal + rng.gen_range(0.0..1.0)
    });
    let split = random_split(n, rng);
    AttributedGraph::new(n, edges, features, labels, sensitive, split)
}

/// Half train, a quarter validation and the rest test, in random order.
pub fn random_split(n: usize, rng: &mut impl Rng) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n / 2 {
            split[i] = Split::Train;
        } else if rank < 3 * n / 4 {
            split[i] = Split::Val;
        }
    }
    split
}

/// Random instance for the bound checks: balanced groups, features `U[0,1]^d`,
/// Erdős–Rényi edges with probability `p`. Draws are repeated until no node is isolated.
pub fn theorem_instance(n: usize, d: usize, p: f64, rng: &mut impl Rng) -> Result<AttributedGraph> {
    if n < 2 || d == 0 {
        return Err(Error::Config(format!("theorem instance needs n >= 2 and d >= 1, got {n}, {d}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("edge probability must lie in (0, 1], got {p}")));
    }
    const MAX_TRIES: usize = 10_000;
    for _ in 0..MAX_TRIES {
        let mut degree = vec![0usize; n];
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.push((i, j));
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
        if degree.contains(&0) {
            continue;
        }
        let features = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(0.0..1.0));
        let sensitive: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let labels = vec![0; n];
        return AttributedGraph::new(n, edges, features, labels, sensitive, vec![Split::None; n]);
    }
    Err(Error::Config(format!(
        "could not draw a graph without isolated nodes (n = {n}, p = {p})"
    )))
}
