//! Empirical checks of the demographic-parity bounds for two-layer
//! fairness-aware propagation.
//!
//! The bounds are stated for a simplified propagation with mean neighbour
//! aggregation and unit coefficients:
//!
//! `F^(k) = X + D⁻¹A F^(k-1) + P(F^(k-1)) F^(k-1)`, with `F^(0) = X`,
//!
//! which is deliberately separate from the production layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, GroupPartition};
use crate::kernel::{build_coupling_full, inter_group_similarity, KernelConfig};
use crate::metrics::spearman;
use crate::model::EpochRecord;
use crate::tensor::DenseMatrix;

/// Layer count the bounds are stated for.
pub const THEOREM_LAYERS: usize = 2;

/// Lipschitz constant used for the softmax head. The true constant is below 1,
/// so using 1 can only enlarge the right-hand side.
pub const LIPSCHITZ: f64 = 1.0;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `‖mean_{S0} F - mean_{S1} F‖`.
pub fn rep_discrepancy(f: &DenseMatrix, part: &GroupPartition) -> Result<f64> {
    if part.n0() == 0 {
        return Err(Error::EmptyGroup(0));
    }
    if part.n1() == 0 {
        return Err(Error::EmptyGroup(1));
    }
    Ok(norm(&diff(&f.mean_of_rows(&part.group0), &f.mean_of_rows(&part.group1))))
}

/// Per-column maximum deviation from the column mean, `Δ_m = max_i |μ_m - X_im|`.
pub fn deviation_vector(x: &DenseMatrix) -> Vec<f64> {
    let all: Vec<usize> = (0..x.rows()).collect();
    let mu = x.mean_of_rows(&all);
    (0..x.cols())
        .map(|m| (0..x.rows()).map(|i| (mu[m] - x[(i, m)]).abs()).fold(0.0, f64::max))
        .collect()
}

/// `(2 + 4/N0 + 4/N1)² + 6 + 8/N0 + 8/N1`.
pub fn c1(n0: usize, n1: usize) -> f64 {
    let (a, b) = (1.0 / n0 as f64, 1.0 / n1 as f64);
    (2.0 + 4.0 * a + 4.0 * b).powi(2) + 6.0 + 8.0 * a + 8.0 * b
}

/// `‖μ⁰ - μ¹‖ + 8(1 + 1/N0 + 1/N1)²‖Δ‖ + 2‖Δ‖`.
pub fn c2(mean_gap: f64, delta_norm: f64, n0: usize, n1: usize) -> f64 {
    let (a, b) = (1.0 / n0 as f64, 1.0 / n1 as f64);
    mean_gap + 8.0 * (1.0 + a + b).powi(2) * delta_norm + 2.0 * delta_norm
}

/// `(3 - 1/N0 - 1/N1)‖μ⁰ - μ¹‖ + (4 + 2/N0 + 2/N1)‖Δ‖`.
pub fn c3(mean_gap: f64, delta_norm: f64, n0: usize, n1: usize) -> f64 {
    let (a, b) = (1.0 / n0 as f64, 1.0 / n1 as f64);
    (3.0 - a - b) * mean_gap + (4.0 + 2.0 * a + 2.0 * b) * delta_norm
}

/// Applies the simplified propagation `layers` times and returns `F^(0) … F^(layers)`.
pub fn theorem_mode_propagate(
    x: &DenseMatrix,
    graph: &AttributedGraph,
    part: &GroupPartition,
    cfg: &KernelConfig,
    layers: usize,
) -> Result<Vec<DenseMatrix>> {
    if x.rows() != graph.num_nodes() {
        return Err(Error::shape(
            "theorem_mode_propagate",
            format!("{} feature rows for {} nodes", x.rows(), graph.num_nodes()),
        ));
    }
    let nbrs = graph.neighbors();
    if let Some(i) = nbrs.iter().position(Vec::is_empty) {
        return Err(Error::IsolatedNode(i));
    }
    let mut reps = vec![x.clone()];
    for _ in 0..layers {
        let prev = reps.last().expect("non-empty");
        let mut next = x.clone();
        for (i, list) in nbrs.iter().enumerate() {
            let scale = 1.0 / list.len() as f64;
            for &j in list {
                for (o, &v) in next.row_mut(i).iter_mut().zip(prev.row(j)) {
                    *o += scale * v;
                }
            }
        }
        let coupling = build_coupling_full(prev, part, cfg)?;
        next.add_assign(&coupling.apply(prev)?)?;
        reps.push(next.check_finite("theorem_mode_propagate")?);
    }
    Ok(reps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-9,
        }
    }
}

/// Every quantity entering the two bounds for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub mu: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub delta_vec: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Representation discrepancy of the final layer.
    pub dp_rep: f64,
    /// Mean cross-group kernel value of the penultimate layer.
    pub sim: f64,
    pub lipschitz: f64,
    /// Soft-probability parity bound.
    pub parity: BoundCheck,
    /// Representation discrepancy bound.
    pub representation: BoundCheck,
}

impl TheoryReport {
    pub fn holds(&self) -> bool {
        self.parity.holds && self.representation.holds
    }
}

/// Computes both bounds on a two-layer propagation of `graph`'s features, with head `w`.
pub fn theory_report(graph: &AttributedGraph, w: &DenseMatrix, cfg: &KernelConfig) -> Result<TheoryReport> {
    let x = graph.features();
    if w.rows() != x.cols() || w.cols() < 2 {
        return Err(Error::shape(
            "theory_report",
            format!("head {:?} for {} features", w.shape(), x.cols()),
        ));
    }
    let part = graph.partition();
    let (n0, n1) = (part.n0(), part.n1());
    let all: Vec<usize> = (0..x.rows()).collect();
    let mu = x.mean_of_rows(&all);
    let mu0 = x.mean_of_rows(&part.group0);
    let mu1 = x.mean_of_rows(&part.group1);
    let delta_vec = deviation_vector(x);
    let gap = norm(&diff(&mu0, &mu1));
    let dnorm = norm(&delta_vec);
    let (k1, k2, k3) = (c1(n0, n1), c2(gap, dnorm, n0, n1), c3(gap, dnorm, n0, n1));

    let reps = theorem_mode_propagate(x, graph, &part, cfg, THEOREM_LAYERS)?;
    let last = &reps[THEOREM_LAYERS];
    let penultimate = &reps[THEOREM_LAYERS - 1];
    let dp_rep = rep_discrepancy(last, &part)?;
    let sim = inter_group_similarity(penultimate, &part, cfg)?;

    // Σ_{S0} Σ_{S1} k = N0 N1 · sim
    let cross_sum = sim * (n0 * n1) as f64;
    let (f0, f1) = (n0 as f64, n1 as f64);
    let factor = 3.0 - (1.0 / (f0 * f1 * f1) + 1.0 / (f0 * f0 * f1)) * cross_sum;
    let representation = BoundCheck::new(dp_rep, factor * k3 + k2);

    let probs = last.matmul(w)?.row_softmax();
    let positive = |group: &[usize]| group.iter().map(|&i| probs[(i, 1)]).sum::<f64>() / group.len() as f64;
    let dp_soft = (positive(&part.group0) - positive(&part.group1)).abs();
    let parity = BoundCheck::new(dp_soft, LIPSCHITZ / 2.0 * w.frobenius_norm() * (dp_rep + k1 * dnorm));

    Ok(TheoryReport {
        mu,
        mu0,
        mu1,
        delta_vec,
        c1: k1,
        c2: k2,
        c3: k3,
        dp_rep,
        sim,
        lipschitz: LIPSCHITZ,
        parity,
        representation,
    })
}

/// Soft demographic-parity bound for head `w`.
pub fn check_bound_thm1(graph: &AttributedGraph, w: &DenseMatrix, cfg: &KernelConfig) -> Result<BoundCheck> {
    theory_report(graph, w, cfg).map(|r| r.parity)
}

/// Representation-discrepancy bound.
pub fn check_bound_thm2(graph: &AttributedGraph, cfg: &KernelConfig) -> Result<BoundCheck> {
    let w = DenseMatrix::zeros(graph.feature_dim(), 2);
    theory_report(graph, &w, cfg).map(|r| r.representation)
}

/// Rank correlation between similarity and test parity gap across a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCorrelation {
    pub epochs: usize,
    /// `None` when either series is constant.
    pub spearman: Option<f64>,
}

pub const MIN_TRACE_EPOCHS: usize = 10;

pub fn sim_vs_dp_trace(records: &[EpochRecord]) -> Result<TraceCorrelation> {
    if records.len() < MIN_TRACE_EPOCHS {
        return Err(Error::Config(format!(
            "need at least {MIN_TRACE_EPOCHS} epochs for a trace correlation, got {}",
            records.len()
        )));
    }
    let sim: Vec<f64> = records.iter().map(|r| r.sim).collect();
    let dp: Vec<f64> = records.iter().map(|r| r.test.delta_dp).collect();
    if sim.iter().chain(&dp).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trace correlation input"));
    }
    Ok(TraceCorrelation {
        epochs: records.len(),
        spearman: spearman(&sim, &dp)?,
    })
}
