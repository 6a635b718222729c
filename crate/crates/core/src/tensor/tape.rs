//! Reverse-mode gradient tape over whole matrices.
//!
//! Only the primitives the model needs are supported. Every recorded value is
//! checked for finiteness, and `backward` walks the nodes in exact reverse
//! order of recording.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::kernel::{CouplingVariant, FairnessCoupling};
use crate::tensor::{dot, DenseMatrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Whether gradients flow through the kernel similarities inside a coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelGrad {
    #[default]
    Full,
    Detached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

/// Probability floor inside the log of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Cached attention state for one GAT aggregation.
#[derive(Debug, Clone)]
struct AttentionCache {
    neighbors: Arc<Vec<Vec<usize>>>,
    slope: f64,
    /// pre-activation scores, aligned with `neighbors`
    scores: Vec<Vec<f64>>,
    /// normalised attention weights, aligned with `neighbors`
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sparse(Arc<SparseMatrix>, Var),
    Coupling {
        input: Var,
        coupling: Arc<FairnessCoupling>,
        alpha: f64,
        grad: KernelGrad,
    },
    Attention {
        input: Var,
        att: Var,
        cache: Box<AttentionCache>,
    },
    RowSoftmax(Var),
    CrossEntropy {
        probs: Var,
        labels: Arc<Vec<u8>>,
        mask: Arc<Vec<usize>>,
        reduction: Reduction,
    },
    Mmd {
        input: Var,
        coupling: Arc<FairnessCoupling>,
        alpha: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseMatrix,
    op: Op,
    is_param: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to recorded values.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, panicking if none was computed.
    pub fn wrt(&self, v: Var) -> &DenseMatrix {
        self.get(v).expect("no gradient recorded for value")
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            is_param: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable leaf. It always receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, value: DenseMatrix) -> Result<Var> {
        let v = self.push(value, Op::Leaf, "param")?;
        self.nodes[v.0].is_param = true;
        Ok(v)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Adds a `1 × c` row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        self.push(out, Op::AddRowBias(x, bias), "add_row_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope), "leaky_relu")
    }

    /// `m * x` for a sparse operator `m`.
    pub fn sparse_apply(&mut self, m: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = m.apply(self.value(x))?;
        self.push(out, Op::Sparse(m, x), "sparse_apply")
    }

    /// `P F` where `P` was built from the current value of `input`.
    ///
    /// With [`KernelGrad::Full`] the backward pass also differentiates the
    /// kernel entries of `P` with respect to `input`.
    pub fn coupling_apply(
        &mut self,
        input: Var,
        coupling: Arc<FairnessCoupling>,
        alpha: f64,
        grad: KernelGrad,
    ) -> Result<Var> {
        let out = coupling.apply(self.value(input))?;
        self.push(
            out,
            Op::Coupling {
                input,
                coupling,
                alpha,
                grad,
            },
            "coupling_apply",
        )
    }

    /// Attention aggregation `Z_i = Σ_{j∈N(i)} a_ij F_j` with
    /// `a_i· = softmax_j(LeakyReLU(b₁·F_i + b₂·F_j))` and `att = [b₁ ∥ b₂]` of shape `1 × 2c`.
    pub fn attention(
        &mut self,
        input: Var,
        att: Var,
        neighbors: Arc<Vec<Vec<usize>>>,
        slope: f64,
    ) -> Result<Var> {
        let f = self.value(input);
        let b = self.value(att);
        let c = f.cols();
        if b.rows() != 1 || b.cols() != 2 * c {
            return Err(Error::shape(
                "attention",
                format!("attention vector {:?} for width {c}", b.shape()),
            ));
        }
        if neighbors.len() != f.rows() {
            return Err(Error::shape(
                "attention",
                format!("{} neighbour lists for {} rows", neighbors.len(), f.rows()),
            ));
        }
        let (b_self, b_nbr) = b.row(0).split_at(c);
        let self_score: Vec<f64> = (0..f.rows()).map(|i| dot(b_self, f.row(i))).collect();
        let nbr_score: Vec<f64> = (0..f.rows()).map(|j| dot(b_nbr, f.row(j))).collect();

        let mut out = DenseMatrix::zeros(f.rows(), c);
        let mut scores = Vec::with_capacity(f.rows());
        let mut weights = Vec::with_capacity(f.rows());
        for (i, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                return Err(Error::IsolatedNode(i));
            }
            let pre: Vec<f64> = nbrs.iter().map(|&j| self_score[i] + nbr_score[j]).collect();
            let e: Vec<f64> = pre.iter().map(|&u| if u > 0.0 { u } else { slope * u }).collect();
            let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let o = out.row_mut(i);
            for (&j, &a) in nbrs.iter().zip(&w) {
                for (o, &v) in o.iter_mut().zip(f.row(j)) {
                    *o += a * v;
                }
            }
            scores.push(pre);
            weights.push(w);
        }
        let cache = Box::new(AttentionCache {
            neighbors,
            slope,
            scores,
            weights,
        });
        self.push(out, Op::Attention { input, att, cache }, "attention")
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).row_softmax();
        self.push(out, Op::RowSoftmax(x), "row_softmax")
    }

    /// `-Σ_{i∈mask} log p[i, y_i]`, summed or averaged over the mask.
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        labels: Arc<Vec<u8>>,
        mask: Arc<Vec<usize>>,
        reduction: Reduction,
    ) -> Result<Var> {
        let p = self.value(probs);
        if mask.is_empty() {
            return Err(Error::Config("cross-entropy mask is empty".into()));
        }
        if labels.len() != p.rows() {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), p.rows()),
            ));
        }
        let mut total = 0.0;
        for &i in mask.iter() {
            let y = labels[i] as usize;
            if y >= p.cols() {
                return Err(Error::shape("cross_entropy", format!("label {y} out of range")));
            }
            total -= p[(i, y)].max(LOG_CLAMP).ln();
        }
        if reduction == Reduction::Mean {
            total /= mask.len() as f64;
        }
        let out = DenseMatrix::filled(1, 1, total);
        self.push(
            out,
            Op::CrossEntropy {
                probs,
                labels,
                mask,
                reduction,
            },
            "cross_entropy",
        )
    }

    /// Biased squared MMD of `input` over the coupling's groups (a `1 × 1` value).
    pub fn mmd(&mut self, input: Var, coupling: Arc<FairnessCoupling>, alpha: f64) -> Result<Var> {
        if coupling.variant() != CouplingVariant::Full {
            return Err(Error::Config("mmd needs a full coupling".into()));
        }
        let (n0, n1) = coupling.norms();
        let weights: Vec<f64> = coupling
            .groups()
            .iter()
            .map(|&g| if g == 0 { 1.0 / n0 as f64 } else { -1.0 / n1 as f64 })
            .collect();
        let k = coupling.kernel();
        let mut total = 0.0;
        for (a, wa) in weights.iter().enumerate() {
            total += wa * dot(k.row(a), &weights);
        }
        let out = DenseMatrix::filled(1, 1, total);
        self.push(
            out,
            Op::Mmd {
                input,
                coupling,
                alpha,
            },
            "mmd",
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Config("backward called on a value not recorded on this tape".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.is_param && g.is_none() {
                *g = Some(DenseMatrix::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul(&bv.transpose())?)?;
                accumulate(grads, *b, av.transpose().matmul(g)?)?;
            }
            Op::AddRowBias(x, bias) => {
                let mut gb = DenseMatrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, g.clone())?;
                accumulate(grads, *bias, gb)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.scale(*s))?,
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| {
                    if xv[(i, j)] > 0.0 {
                        g[(i, j)]
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *x, d)?;
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let d = DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| {
                    if xv[(i, j)] > 0.0 {
                        g[(i, j)]
                    } else {
                        slope * g[(i, j)]
                    }
                });
                accumulate(grads, *x, d)?;
            }
            Op::Sparse(m, x) => accumulate(grads, *x, m.apply_transpose(g)?)?,
            Op::Coupling {
                input,
                coupling,
                alpha,
                grad,
            } => {
                let f = self.value(*input);
                accumulate(grads, *input, coupling_backward(coupling, f, g, *alpha, *grad))?;
            }
            Op::Attention { input, att, cache } => {
                let (gf, gb) = attention_backward(self.value(*input), self.value(*att), cache, g);
                accumulate(grads, *input, gf)?;
                accumulate(grads, *att, gb)?;
            }
            Op::RowSoftmax(x) => {
                let y = &node.value;
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let inner = dot(g.row(i), y.row(i));
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = y[(i, j)] * (g[(i, j)] - inner);
                    }
                }
                accumulate(grads, *x, d)?;
            }
            Op::CrossEntropy {
                probs,
                labels,
                mask,
                reduction,
            } => {
                let p = self.value(*probs);
                let scale = match reduction {
                    Reduction::Sum => g[(0, 0)],
                    Reduction::Mean => g[(0, 0)] / mask.len() as f64,
                };
                let mut d = DenseMatrix::zeros(p.rows(), p.cols());
                for &i in mask.iter() {
                    let y = labels[i] as usize;
                    let pv = p[(i, y)];
                    if pv > LOG_CLAMP {
                        d[(i, y)] -= scale / pv;
                    }
                }
                accumulate(grads, *probs, d)?;
            }
            Op::Mmd {
                input,
                coupling,
                alpha,
            } => {
                // ∇ MMD² = -4α P F
                let pf = coupling.apply(self.value(*input))?;
                accumulate(grads, *input, pf.scale(-4.0 * alpha * g[(0, 0)]))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, d: DenseMatrix) -> Result<()> {
    let d = d.check_finite("backward")?;
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d)?,
        slot @ None => *slot = Some(d),
    }
    Ok(())
}

/// Backward of `Y = P(F) F` restricted to the coupling's index set.
///
/// Writing `Y_a = Σ_{b≠a} w_ab k_ab (F_b - F_a)`, the fixed-kernel part is
/// `P G`; the kernel part adds `c_ab · ∂k_ab/∂F` with `c_ab = w_ab ⟨G_a, F_b - F_a⟩`.
fn coupling_backward(
    coupling: &FairnessCoupling,
    f: &DenseMatrix,
    g: &DenseMatrix,
    alpha: f64,
    mode: KernelGrad,
) -> DenseMatrix {
    let idx = coupling.indices();
    let k = coupling.kernel();
    let c = f.cols();
    let mut out = DenseMatrix::zeros(f.rows(), c);

    // P is symmetric, so Pᵀ G = P G
    for (a, &i) in idx.iter().enumerate() {
        let o = out.row_mut(i);
        for (b, &j) in idx.iter().enumerate() {
            let pv = coupling.entry(a, b);
            if pv == 0.0 {
                continue;
            }
            for (o, &gv) in o.iter_mut().zip(g.row(j)) {
                *o += pv * gv;
            }
        }
    }

    if mode == KernelGrad::Full {
        let mut diff = vec![0.0; c];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                if a == b {
                    continue;
                }
                let w = coupling.weight(a, b);
                if w == 0.0 {
                    continue;
                }
                let (fi, fj) = (f.row(i), f.row(j));
                for m in 0..c {
                    diff[m] = fi[m] - fj[m];
                }
                // ⟨G_a, F_b - F_a⟩ = -⟨G_a, diff⟩
                let coeff = -w * dot(g.row(i), &diff);
                let s = coeff * (-2.0 * alpha * k[(a, b)]);
                for m in 0..c {
                    out[(i, m)] += s * diff[m];
                    out[(j, m)] -= s * diff[m];
                }
            }
        }
    }
    out
}

fn attention_backward(
    f: &DenseMatrix,
    b: &DenseMatrix,
    cache: &AttentionCache,
    g: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    let c = f.cols();
    let (b_self, b_nbr) = b.row(0).split_at(c);
    let mut gf = DenseMatrix::zeros(f.rows(), c);
    let mut gb = DenseMatrix::zeros(1, 2 * c);
    for (i, nbrs) in cache.neighbors.iter().enumerate() {
        let w = &cache.weights[i];
        let pre = &cache.scores[i];
        let gi = g.row(i).to_vec();
        // dL/da_ij
        let ga: Vec<f64> = nbrs.iter().map(|&j| dot(&gi, f.row(j))).collect();
        let mean: f64 = w.iter().zip(&ga).map(|(a, d)| a * d).sum();
        for (t, &j) in nbrs.iter().enumerate() {
            for (o, &gv) in gf.row_mut(j).iter_mut().zip(&gi) {
                *o += w[t] * gv;
            }
            let de = w[t] * (ga[t] - mean);
            let du = if pre[t] > 0.0 { de } else { cache.slope * de };
            if du == 0.0 {
                continue;
            }
            for m in 0..c {
                gb[(0, m)] += du * f[(i, m)];
                gb[(0, c + m)] += du * f[(j, m)];
                gf[(i, m)] += du * b_self[m];
                gf[(j, m)] += du * b_nbr[m];
            }
        }
    }
    (gf, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GroupPartition;
    use crate::kernel::{build_coupling, build_coupling_sampled, KernelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Checks `build(tape, x)`'s gradient w.r.t. `x` against central differences
    /// of `value(x)`, which must compute the same scalar without a tape.
    fn check_gradient(
        x: &DenseMatrix,
        build: impl Fn(&mut Tape, Var) -> Var,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone()).unwrap();
        let loss = build(&mut tape, xv);
        let analytic = tape.backward(loss).unwrap().wrt(xv).clone();
        let eval = |m: &DenseMatrix| {
            let mut t = Tape::new();
            let v = t.param(m.clone()).unwrap();
            let l = build(&mut t, v);
            t.value(l)[(0, 0)]
        };
        let h = 1e-6;
        let mut numeric = DenseMatrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut p = x.clone();
                p[(i, j)] += h;
                let mut m = x.clone();
                m[(i, j)] -= h;
                numeric[(i, j)] = (eval(&p) - eval(&m)) / (2.0 * h);
            }
        }
        let err = analytic.sub(&numeric).unwrap().frobenius_norm()
            / numeric.frobenius_norm().max(1e-8);
        assert!(err < tol, "relative error {err}\n{analytic:?}\n{numeric:?}");
    }

    /// Reduces a matrix to a scalar through a fixed random projection.
    fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
        let (r, c) = tape.value(x).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(random(&mut rng, c, 1)).unwrap();
        let y = tape.matmul(x, w).unwrap();
        let rows = tape.constant(random(&mut rng, 1, r)).unwrap();
        tape.matmul(rows, y).unwrap()
    }

    #[test]
    fn sum_of_linear_map_gradient_is_broadcast_input() {
        let mut tape = Tape::new();
        let w = tape.param(DenseMatrix::from_rows(&[vec![0.3, -0.2]]).unwrap()).unwrap();
        let x = tape.constant(DenseMatrix::from_rows(&[vec![1.5], vec![-2.0]]).unwrap()).unwrap();
        let loss = tape.matmul(w, x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let unused = tape.param(DenseMatrix::filled(2, 2, 1.0)).unwrap();
        let x = tape.param(DenseMatrix::filled(1, 1, 3.0)).unwrap();
        let loss = tape.scale(x, 2.0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(unused), &DenseMatrix::zeros(2, 2));
        assert_eq!(g.wrt(x).as_slice(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_handles() {
        let mut tape = Tape::new();
        let x = tape.param(DenseMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
        let empty = Tape::new();
        assert!(empty.backward(x).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(DenseMatrix::filled(1, 1, f64::MAX)).unwrap();
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite("scale"))));
    }

    #[test]
    fn elementwise_and_dense_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 4, 3);
        let w = random(&mut rng, 3, 2);
        let bias = random(&mut rng, 1, 2);
        check_gradient(&x, |t, v| project(t, v, 2), 1e-6);
        check_gradient(
            &x,
            |t, v| {
                let wv = t.constant(w.clone()).unwrap();
                let y = t.matmul(v, wv).unwrap();
                project(t, y, 3)
            },
            1e-6,
        );
        check_gradient(
            &w,
            |t, v| {
                let xv = t.constant(x.clone()).unwrap();
                let y = t.matmul(xv, v).unwrap();
                project(t, y, 3)
            },
            1e-6,
        );
        check_gradient(
            &bias,
            |t, v| {
                let xv = t.constant(x.matmul(&w).unwrap()).unwrap();
                let y = t.add_row_bias(xv, v).unwrap();
                let y = t.leaky_relu(y, 0.2).unwrap();
                project(t, y, 4)
            },
            1e-6,
        );
        check_gradient(
            &x,
            |t, v| {
                let y = t.relu(v).unwrap();
                let z = t.scale(y, -1.7).unwrap();
                let s = t.add(z, v).unwrap();
                project(t, s, 5)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = random(&mut rng, 5, 2);
        let labels = Arc::new(vec![0u8, 1, 1, 0, 1]);
        let mask = Arc::new(vec![0usize, 2, 3]);
        for reduction in [Reduction::Sum, Reduction::Mean] {
            check_gradient(
                &logits,
                |t, v| {
                    let p = t.row_softmax(v).unwrap();
                    t.cross_entropy(p, labels.clone(), mask.clone(), reduction).unwrap()
                },
                1e-6,
            );
        }
        check_gradient(
            &logits,
            |t, v| {
                let p = t.row_softmax(v).unwrap();
                project(t, p, 1)
            },
            1e-6,
        );
    }

    #[test]
    fn sparse_apply_matches_dense_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let triplets = vec![(0, 1, 0.5), (1, 0, 2.0), (2, 2, -1.0), (0, 0, 0.3), (2, 0, 1.1)];
        let m = Arc::new(SparseMatrix::from_triplets(3, 3, triplets));
        let x = random(&mut rng, 3, 2);
        let mut t = Tape::new();
        let xv = t.constant(x.clone()).unwrap();
        let y = t.sparse_apply(m.clone(), xv).unwrap();
        assert!(t.value(y).max_abs_diff(&m.to_dense().matmul(&x).unwrap()) < 1e-15);
        check_gradient(
            &x,
            |t, v| {
                let y = t.sparse_apply(m.clone(), v).unwrap();
                project(t, y, 6)
            },
            1e-6,
        );
    }

    #[test]
    fn coupling_gradient_full_and_detached() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let part = GroupPartition::from_sensitive(&[0, 1, 1, 0, 1, 0]).unwrap();
        let alpha = 0.7;
        let cfg = KernelConfig::new(alpha).unwrap();
        let x = random(&mut rng, 6, 2);
        for variant in [CouplingVariant::Full, CouplingVariant::Simplified] {
            // kernel differentiated
            check_gradient(
                &x,
                |t, v| {
                    let c = Arc::new(build_coupling(t.value(v), &part, &cfg, variant).unwrap());
                    let y = t.coupling_apply(v, c, alpha, KernelGrad::Full).unwrap();
                    project(t, y, 7)
                },
                1e-6,
            );
            // kernel frozen at x
            let frozen = Arc::new(build_coupling(&x, &part, &cfg, variant).unwrap());
            check_gradient(
                &x,
                |t, v| {
                    let y = t.coupling_apply(v, frozen.clone(), alpha, KernelGrad::Detached).unwrap();
                    project(t, y, 7)
                },
                1e-6,
            );
        }
        // sampled subset
        check_gradient(
            &x,
            |t, v| {
                let c = Arc::new(
                    build_coupling_sampled(t.value(v), &[0, 5], &[2, 4], &cfg, CouplingVariant::Full)
                        .unwrap(),
                );
                let y = t.coupling_apply(v, c, alpha, KernelGrad::Full).unwrap();
                project(t, y, 8)
            },
            1e-6,
        );
    }

    #[test]
    fn mmd_primitive_matches_kernel_module() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let part = GroupPartition::from_sensitive(&[0, 1, 1, 0, 0]).unwrap();
        let cfg = KernelConfig::new(0.4).unwrap();
        let x = random(&mut rng, 5, 3);
        let mut t = Tape::new();
        let v = t.constant(x.clone()).unwrap();
        let c = Arc::new(build_coupling(&x, &part, &cfg, CouplingVariant::Full).unwrap());
        let m = t.mmd(v, c, 0.4).unwrap();
        let expect = crate::kernel::mmd(&x, &part, &cfg).unwrap();
        assert!((t.value(m)[(0, 0)] - expect).abs() < 1e-12);
        check_gradient(
            &x,
            |t, v| {
                let c = Arc::new(build_coupling(t.value(v), &part, &cfg, CouplingVariant::Full).unwrap());
                t.mmd(v, c, 0.4).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn attention_gradient_and_uniform_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let nbrs = Arc::new(vec![vec![0, 1, 2], vec![0, 1], vec![0, 2, 3], vec![2, 3]]);
        let x = random(&mut rng, 4, 2);
        let b = random(&mut rng, 1, 4);
        check_gradient(
            &x,
            |t, v| {
                let bv = t.constant(b.clone()).unwrap();
                let y = t.attention(v, bv, nbrs.clone(), 0.2).unwrap();
                project(t, y, 9)
            },
            1e-6,
        );
        check_gradient(
            &b,
            |t, v| {
                let xv = t.constant(x.clone()).unwrap();
                let y = t.attention(xv, v, nbrs.clone(), 0.2).unwrap();
                project(t, y, 9)
            },
            1e-6,
        );
        let mut t = Tape::new();
        let xv = t.constant(x.clone()).unwrap();
        let zero = t.constant(DenseMatrix::zeros(1, 4)).unwrap();
        let y = t.attention(xv, zero, nbrs.clone(), 0.2).unwrap();
        let expect = x.mean_of_rows(&[0, 2, 3]);
        for (a, e) in t.value(y).row(2).iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }
}
