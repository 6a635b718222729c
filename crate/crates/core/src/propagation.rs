//! Fairness-aware message-passing layers.
//!
//! Each layer is a smoothing step on the graph, a fidelity pull towards the
//! layer input `X_in`, and a kernel coupling that draws the two sensitive
//! groups together:
//!
//! `F_next = (1-γ) S F + 4γλ_f α P F + γ X_in`, with `γ = 1/(1+λ_s)`.
//!
//! `S` is the normalised adjacency (GCN), `A + (1+ε)I` (GIN) or learned
//! attention (GAT). Plain-matrix layer functions are provided for direct use
//! and testing; [`record_layer`] records the same computation on a [`Tape`].

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_normalized_adjacency, gin_operator, AttributedGraph, GroupPartition, NormalizedOperator,
    SparseMatrix,
};
use crate::kernel::{
    build_coupling, build_coupling_sampled, mmd, CouplingVariant, FairnessCoupling, KernelConfig,
};
use crate::tensor::{dot, DenseMatrix, KernelGrad, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gmmd,
    GmmdS,
    Vanilla,
}

impl Variant {
    /// Coupling used by the variant, or `None` for plain propagation.
    pub fn coupling(self) -> Option<CouplingVariant> {
        match self {
            Variant::Gmmd => Some(CouplingVariant::Full),
            Variant::GmmdS => Some(CouplingVariant::Simplified),
            Variant::Vanilla => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gcn,
    Gin,
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub variant: Variant,
    pub backbone: Backbone,
    /// Number of message-passing layers.
    pub layers: usize,
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub alpha: f64,
    pub kernel_grad: KernelGrad,
    pub gin_epsilon: f64,
    /// Nodes drawn per sensitive group for the coupling; 0 couples every node.
    pub sample_size: usize,
    /// When false the graph-smoothing term is replaced by the identity.
    pub smooth: bool,
    pub gat_slope: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gmmd,
            backbone: Backbone::Gcn,
            layers: 2,
            lambda_s: 1.0,
            lambda_f: 1.0,
            alpha: 1.0,
            kernel_grad: KernelGrad::Full,
            gin_epsilon: 0.0,
            sample_size: 0,
            smooth: true,
            gat_slope: 0.2,
        }
    }
}

impl PropagationConfig {
    /// Step size `1/(1+λ_s)`.
    pub fn gamma(&self) -> f64 {
        1.0 / (1.0 + self.lambda_s)
    }

    pub fn kernel(&self) -> Result<KernelConfig> {
        KernelConfig::new(self.alpha)
    }

    /// Scale applied to the coupling term, `4γλ_f α`.
    pub fn coupling_scale(&self) -> f64 {
        4.0 * self.gamma() * self.lambda_f * self.alpha
    }

    /// Whether a coupling term contributes at all.
    pub fn is_fair(&self) -> bool {
        self.variant != Variant::Vanilla && self.lambda_f != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite, got {v}")))
            }
        };
        finite("lambda_s", self.lambda_s)?;
        finite("lambda_f", self.lambda_f)?;
        finite("gin_epsilon", self.gin_epsilon)?;
        finite("gat_slope", self.gat_slope)?;
        if self.lambda_s < 0.0 {
            return Err(Error::Config(format!("lambda_s must be >= 0, got {}", self.lambda_s)));
        }
        if self.lambda_f < 0.0 {
            return Err(Error::Config(format!("lambda_f must be >= 0, got {}", self.lambda_f)));
        }
        KernelConfig::new(self.alpha)?;
        Ok(())
    }
}

/// Attention vector `[b_self ∥ b_neighbour]` for the GAT backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GATParams {
    pub att: DenseMatrix,
    pub slope: f64,
}

impl GATParams {
    pub fn new(att: Vec<f64>, slope: f64) -> Result<Self> {
        if att.is_empty() || att.len() % 2 != 0 {
            return Err(Error::shape("gat params", format!("attention length {} must be even", att.len())));
        }
        let len = att.len();
        Ok(Self {
            att: DenseMatrix::from_vec(1, len, att)?,
            slope,
        })
    }

    /// Output width the vector is sized for.
    pub fn width(&self) -> usize {
        self.att.cols() / 2
    }
}

/// Neighbour lists with each node included in its own list.
pub fn neighbors_with_self(graph: &AttributedGraph) -> Vec<Vec<usize>> {
    let mut nbrs = graph.neighbors();
    for (i, n) in nbrs.iter_mut().enumerate() {
        let pos = n.binary_search(&i).unwrap_err();
        n.insert(pos, i);
    }
    nbrs
}

/// Graph-derived operators shared by every layer of a run.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub num_nodes: usize,
    pub partition: GroupPartition,
    /// Normalised adjacency for GCN, `A + (1+ε)I` for GIN, unused for GAT.
    pub smoother: Arc<SparseMatrix>,
    pub neighbors: Arc<Vec<Vec<usize>>>,
}

impl GraphContext {
    pub fn new(graph: &AttributedGraph, cfg: &PropagationConfig) -> Result<Self> {
        let smoother = match cfg.backbone {
            Backbone::Gin => gin_operator(graph, cfg.gin_epsilon),
            Backbone::Gcn | Backbone::Gat => build_normalized_adjacency(graph)?.into_matrix(),
        };
        Ok(Self {
            num_nodes: graph.num_nodes(),
            partition: graph.partition(),
            smoother: Arc::new(smoother),
            neighbors: Arc::new(neighbors_with_self(graph)),
        })
    }
}

/// Per-group node samples for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Samples {
    pub group0: Vec<usize>,
    pub group1: Vec<usize>,
}

impl Samples {
    /// Draws `size` nodes per group uniformly without replacement.
    pub fn draw(part: &GroupPartition, size: usize, rng: &mut impl Rng) -> Result<Self> {
        if size > part.n0().min(part.n1()) {
            return Err(Error::Sample(format!(
                "sample size {size} exceeds smaller group ({} / {})",
                part.n0(),
                part.n1()
            )));
        }
        let pick = |group: &[usize], rng: &mut _| {
            let mut chosen: Vec<usize> = rand::seq::index::sample(rng, group.len(), size)
                .into_iter()
                .map(|k| group[k])
                .collect();
            chosen.sort_unstable();
            chosen
        };
        let group0 = pick(&part.group0, rng);
        let group1 = pick(&part.group1, rng);
        Ok(Self { group0, group1 })
    }
}

fn check_same_shape(a: &DenseMatrix, b: &DenseMatrix, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn combine(
    smoothed: &DenseMatrix,
    coupled: Option<&DenseMatrix>,
    x_in: &DenseMatrix,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    let gamma = cfg.gamma();
    let mut out = smoothed.scale(1.0 - gamma);
    if let Some(pf) = coupled {
        out.add_assign(&pf.scale(cfg.coupling_scale()))?;
    }
    out.add_assign(&x_in.scale(gamma))?;
    out.check_finite("propagation layer")
}

fn fair_term(f_prev: &DenseMatrix, coupling: &FairnessCoupling, cfg: &PropagationConfig) -> Result<Option<DenseMatrix>> {
    if cfg.lambda_f == 0.0 {
        return Ok(None);
    }
    coupling.apply(f_prev).map(Some)
}

/// GCN layer with the full coupling `P`.
pub fn gmmd_layer(
    f_prev: &DenseMatrix,
    x_in: &DenseMatrix,
    op: &NormalizedOperator,
    coupling: &FairnessCoupling,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    if coupling.variant() != CouplingVariant::Full {
        return Err(Error::Config("gmmd_layer needs a full coupling".into()));
    }
    check_same_shape(f_prev, x_in, "gmmd_layer")?;
    let smoothed = op.apply(f_prev)?;
    combine(&smoothed, fair_term(f_prev, coupling, cfg)?.as_ref(), x_in, cfg)
}

/// GCN layer with the simplified, cross-group-only coupling.
pub fn gmmd_s_layer(
    f_prev: &DenseMatrix,
    x_in: &DenseMatrix,
    op: &NormalizedOperator,
    coupling: &FairnessCoupling,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    if coupling.variant() != CouplingVariant::Simplified {
        return Err(Error::Config("gmmd_s_layer needs a simplified coupling".into()));
    }
    check_same_shape(f_prev, x_in, "gmmd_s_layer")?;
    let smoothed = op.apply(f_prev)?;
    combine(&smoothed, fair_term(f_prev, coupling, cfg)?.as_ref(), x_in, cfg)
}

/// Smoothing for every node plus the coupling correction on sampled rows only.
///
/// The coupling type follows `cfg.variant`; empty samples give the plain step.
pub fn sampled_layer(
    f_prev: &DenseMatrix,
    x_in: &DenseMatrix,
    op: &NormalizedOperator,
    sampled0: &[usize],
    sampled1: &[usize],
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    check_same_shape(f_prev, x_in, "sampled_layer")?;
    let smoothed = op.apply(f_prev)?;
    let coupled = match cfg.variant.coupling() {
        Some(variant) if !sampled0.is_empty() || !sampled1.is_empty() => {
            let c = build_coupling_sampled(f_prev, sampled0, sampled1, &cfg.kernel()?, variant)?;
            fair_term(f_prev, &c, cfg)?
        }
        _ => None,
    };
    combine(&smoothed, coupled.as_ref(), x_in, cfg)
}

/// GIN layer: `(1-γ)(A + (1+ε)I) F + 4γλ_f α P F + γ X_in` on the raw adjacency.
pub fn gin_fair_layer(
    f_prev: &DenseMatrix,
    x_in: &DenseMatrix,
    graph: &AttributedGraph,
    coupling: &FairnessCoupling,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    check_same_shape(f_prev, x_in, "gin_fair_layer")?;
    let smoothed = gin_operator(graph, cfg.gin_epsilon).apply(f_prev)?;
    combine(&smoothed, fair_term(f_prev, coupling, cfg)?.as_ref(), x_in, cfg)
}

/// Row-normalised attention weights over each node's neighbourhood (self included).
pub fn attention_matrix(
    f: &DenseMatrix,
    neighbors: &[Vec<usize>],
    gat: &GATParams,
) -> Result<SparseMatrix> {
    let c = f.cols();
    if gat.width() != c {
        return Err(Error::shape("attention", format!("attention width {} for {c} columns", gat.width())));
    }
    let (b_self, b_nbr) = gat.att.row(0).split_at(c);
    let mut triplets = Vec::new();
    for (i, nbrs) in neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::IsolatedNode(i));
        }
        let scores: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                let u = dot(b_self, f.row(i)) + dot(b_nbr, f.row(j));
                if u > 0.0 {
                    u
                } else {
                    gat.slope * u
                }
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        for (&j, e) in nbrs.iter().zip(exp) {
            triplets.push((i, j, e / total));
        }
    }
    Ok(SparseMatrix::from_triplets(f.rows(), f.rows(), triplets))
}

/// GAT layer: attention aggregation in place of the normalised adjacency.
pub fn gat_fair_layer(
    f_prev: &DenseMatrix,
    x_in: &DenseMatrix,
    graph: &AttributedGraph,
    coupling: &FairnessCoupling,
    gat: &GATParams,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    check_same_shape(f_prev, x_in, "gat_fair_layer")?;
    let att = attention_matrix(f_prev, &neighbors_with_self(graph), gat)?;
    let smoothed = att.apply(f_prev)?;
    combine(&smoothed, fair_term(f_prev, coupling, cfg)?.as_ref(), x_in, cfg)
}

/// Builds the coupling for one layer from the current representation.
pub fn layer_coupling(
    f_prev: &DenseMatrix,
    ctx: &GraphContext,
    cfg: &PropagationConfig,
    samples: Option<&Samples>,
) -> Result<Option<FairnessCoupling>> {
    let Some(variant) = cfg.variant.coupling() else {
        return Ok(None);
    };
    if cfg.lambda_f == 0.0 {
        return Ok(None);
    }
    let kernel = cfg.kernel()?;
    let coupling = match samples {
        Some(s) if s.group0.is_empty() => return Ok(None),
        Some(s) => build_coupling_sampled(f_prev, &s.group0, &s.group1, &kernel, variant)?,
        None => build_coupling(f_prev, &ctx.partition, &kernel, variant)?,
    };
    Ok(Some(coupling))
}

/// Records one layer on `tape`. `att` is required for the GAT backbone.
pub fn record_layer(
    tape: &mut Tape,
    ctx: &GraphContext,
    cfg: &PropagationConfig,
    f_prev: Var,
    x_in: Var,
    att: Option<Var>,
    samples: Option<&Samples>,
) -> Result<Var> {
    let gamma = cfg.gamma();
    let smoothed = if !cfg.smooth {
        f_prev
    } else {
        match cfg.backbone {
            Backbone::Gcn | Backbone::Gin => tape.sparse_apply(ctx.smoother.clone(), f_prev)?,
            Backbone::Gat => {
                let att = att.ok_or_else(|| Error::Config("GAT backbone needs attention parameters".into()))?;
                tape.attention(f_prev, att, ctx.neighbors.clone(), cfg.gat_slope)?
            }
        }
    };
    let mut out = tape.scale(smoothed, 1.0 - gamma)?;
    if let Some(coupling) = layer_coupling(tape.value(f_prev), ctx, cfg, samples)? {
        let pf = tape.coupling_apply(f_prev, Arc::new(coupling), cfg.alpha, cfg.kernel_grad)?;
        let pf = tape.scale(pf, cfg.coupling_scale())?;
        out = tape.add(out, pf)?;
    }
    let fidelity = tape.scale(x_in, gamma)?;
    tape.add(out, fidelity)
}

/// Records `cfg.layers` layers starting from `F^(0) = X_in`.
///
/// Returns every intermediate representation, `F^(0)` first.
pub fn record_propagation(
    tape: &mut Tape,
    ctx: &GraphContext,
    cfg: &PropagationConfig,
    x_in: Var,
    att: Option<Var>,
    samples: Option<&Samples>,
) -> Result<Vec<Var>> {
    let mut reps = vec![x_in];
    for _ in 0..cfg.layers {
        let prev = *reps.last().expect("non-empty");
        reps.push(record_layer(tape, ctx, cfg, prev, x_in, att, samples)?);
    }
    Ok(reps)
}

/// `F^(K)` for a fixed input, without tracking gradients for the caller.
pub fn propagate_k(
    x_in: &DenseMatrix,
    ctx: &GraphContext,
    cfg: &PropagationConfig,
    gat: Option<&GATParams>,
    samples: Option<&Samples>,
) -> Result<DenseMatrix> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let x = tape.constant(x_in.clone())?;
    let att = gat.map(|g| tape.constant(g.att.clone())).transpose()?;
    let reps = record_propagation(&mut tape, ctx, cfg, x, att, samples)?;
    Ok(tape.value(*reps.last().expect("non-empty")).clone())
}

/// Denoising objective `λ_s/2 tr(Fᵀ L̃ F) + ½‖F - X_in‖² + λ_f MMD²(F)` over the whole graph.
pub fn objective(
    f: &DenseMatrix,
    x_in: &DenseMatrix,
    op: &NormalizedOperator,
    part: &GroupPartition,
    cfg: &PropagationConfig,
) -> Result<f64> {
    check_same_shape(f, x_in, "objective")?;
    let lf = op.apply_laplacian(f)?;
    let smooth = dot(f.as_slice(), lf.as_slice());
    let fidelity = f.sub(x_in)?.frobenius_norm().powi(2);
    let fair = if cfg.lambda_f == 0.0 {
        0.0
    } else {
        cfg.lambda_f * mmd(f, part, &cfg.kernel()?)?
    };
    Ok(0.5 * cfg.lambda_s * smooth + 0.5 * fidelity + fair)
}

/// Gradient of [`objective`]: `λ_s L̃ F + F - X_in - 4λ_f α P F`.
pub fn objective_gradient(
    f: &DenseMatrix,
    x_in: &DenseMatrix,
    op: &NormalizedOperator,
    part: &GroupPartition,
    cfg: &PropagationConfig,
) -> Result<DenseMatrix> {
    check_same_shape(f, x_in, "objective_gradient")?;
    let mut grad = op.apply_laplacian(f)?.scale(cfg.lambda_s);
    grad.add_assign(&f.sub(x_in)?)?;
    if cfg.lambda_f != 0.0 {
        let p = build_coupling(f, part, &cfg.kernel()?, CouplingVariant::Full)?;
        grad.add_assign(&p.apply(f)?.scale(-4.0 * cfg.lambda_f * cfg.alpha))?;
    }
    Ok(grad)
}
