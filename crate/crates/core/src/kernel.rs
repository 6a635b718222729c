//! RBF kernel, the biased MMD estimator, and the fairness coupling matrices.
//!
//! For a representation matrix `F` and groups `S0`, `S1`, the coupling `P`
//! satisfies `4α · P F = -∇_F MMD²(F)`. Off-diagonal weights are
//! `-k/N_t²` inside group `t` and `+k/(N0·N1)` across groups; the simplified
//! variant drops the same-group weights. Diagonals make every row sum to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GroupPartition;
use crate::tensor::{squared_distance, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    alpha: f64,
}

impl KernelConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("kernel alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        (-self.alpha * squared_distance(x, z)).exp()
    }
}

/// `exp(-α‖x - z‖²)`.
pub fn rbf_kernel(x: &[f64], z: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::shape(
            "rbf_kernel",
            format!("vectors of length {} and {}", x.len(), z.len()),
        ));
    }
    Ok(cfg.eval(x, z))
}

fn check_rows(f: &DenseMatrix, part: &GroupPartition, op: &'static str) -> Result<()> {
    let max = part.group0.iter().chain(&part.group1).copied().max().unwrap_or(0);
    if max >= f.rows() {
        return Err(Error::shape(
            op,
            format!("group index {max} out of range for {} rows", f.rows()),
        ));
    }
    if part.n0() == 0 {
        return Err(Error::EmptyGroup(0));
    }
    if part.n1() == 0 {
        return Err(Error::EmptyGroup(1));
    }
    Ok(())
}

fn block_sum(f: &DenseMatrix, a: &[usize], b: &[usize], cfg: &KernelConfig) -> f64 {
    a.iter()
        .map(|&i| b.iter().map(|&j| cfg.eval(f.row(i), f.row(j))).sum::<f64>())
        .sum()
}

fn within_sum(f: &DenseMatrix, a: &[usize], cfg: &KernelConfig) -> f64 {
    // diagonal terms are k(x, x) = 1
    let mut off = 0.0;
    for (p, &i) in a.iter().enumerate() {
        for &j in &a[p + 1..] {
            off += cfg.eval(f.row(i), f.row(j));
        }
    }
    a.len() as f64 + 2.0 * off
}

/// Biased (V-statistic) squared MMD between the two sensitive groups.
pub fn mmd(f: &DenseMatrix, part: &GroupPartition, cfg: &KernelConfig) -> Result<f64> {
    check_rows(f, part, "mmd")?;
    let (n0, n1) = (part.n0() as f64, part.n1() as f64);
    let k00 = within_sum(f, &part.group0, cfg);
    let k11 = within_sum(f, &part.group1, cfg);
    let k01 = block_sum(f, &part.group0, &part.group1, cfg);
    Ok(k00 / (n0 * n0) + k11 / (n1 * n1) - 2.0 * k01 / (n0 * n1))
}

/// Mean cross-group kernel value `(1/(N0·N1)) Σ_{i∈S0} Σ_{j∈S1} k(F_i, F_j)`.
pub fn inter_group_similarity(
    f: &DenseMatrix,
    part: &GroupPartition,
    cfg: &KernelConfig,
) -> Result<f64> {
    check_rows(f, part, "inter_group_similarity")?;
    let total = block_sum(f, &part.group0, &part.group1, cfg);
    Ok(total / (part.n0() * part.n1()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingVariant {
    /// `P`: same-group pairs subtract, cross-group pairs add.
    Full,
    /// `P̃`: only cross-group pairs, which add.
    Simplified,
}

/// Dense coupling over an index set of the graph (all nodes, or a sample).
#[derive(Debug, Clone)]
pub struct FairnessCoupling {
    indices: Vec<usize>,
    groups: Vec<u8>,
    norm0: usize,
    norm1: usize,
    variant: CouplingVariant,
    kernel: DenseMatrix,
    /// `P_aa = -Σ_{b≠a} P_ab`
    diag: Vec<f64>,
}

impl FairnessCoupling {
    /// Builds the coupling over `indices`, normalising with `norm0`/`norm1`.
    fn build(
        f: &DenseMatrix,
        indices: Vec<usize>,
        groups: Vec<u8>,
        norm0: usize,
        norm1: usize,
        cfg: &KernelConfig,
        variant: CouplingVariant,
    ) -> Self {
        let m = indices.len();
        let mut kernel = DenseMatrix::identity(m);
        for a in 0..m {
            for b in a + 1..m {
                let k = cfg.eval(f.row(indices[a]), f.row(indices[b]));
                kernel[(a, b)] = k;
                kernel[(b, a)] = k;
            }
        }
        let mut coupling = Self {
            indices,
            groups,
            norm0,
            norm1,
            variant,
            kernel,
            diag: Vec::new(),
        };
        coupling.diag = (0..m)
            .map(|a| {
                -(0..m)
                    .filter(|&b| b != a)
                    .map(|b| coupling.weight(a, b) * coupling.kernel[(a, b)])
                    .sum::<f64>()
            })
            .collect();
        coupling
    }

    /// Coefficient multiplying `k(F_a, F_b)` for the off-diagonal local pair `(a, b)`.
    #[inline]
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        let (ga, gb) = (self.groups[a], self.groups[b]);
        if ga != gb {
            1.0 / (self.norm0 * self.norm1) as f64
        } else {
            match self.variant {
                CouplingVariant::Simplified => 0.0,
                CouplingVariant::Full => {
                    let n = if ga == 0 { self.norm0 } else { self.norm1 } as f64;
                    -1.0 / (n * n)
                }
            }
        }
    }

    /// Graph node indices covered, in local order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Sensitive group of each local index.
    pub fn groups(&self) -> &[u8] {
        &self.groups
    }

    pub fn norms(&self) -> (usize, usize) {
        (self.norm0, self.norm1)
    }

    pub fn variant(&self) -> CouplingVariant {
        self.variant
    }

    /// Entry `(a, b)` of the coupling in local order.
    #[inline]
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.diag[a]
        } else {
            self.weight(a, b) * self.kernel[(a, b)]
        }
    }

    /// Dense coupling values in local order.
    pub fn values(&self) -> DenseMatrix {
        let m = self.indices.len();
        DenseMatrix::from_fn(m, m, |a, b| self.entry(a, b))
    }

    /// Kernel similarities in local order (diagonal is 1).
    pub fn kernel(&self) -> &DenseMatrix {
        &self.kernel
    }

    /// `(P F_S)` scattered into an `N × c` matrix; rows outside the index set are zero.
    pub fn apply(&self, f: &DenseMatrix) -> Result<DenseMatrix> {
        let max = self.indices.iter().copied().max().unwrap_or(0);
        if max >= f.rows() {
            return Err(Error::shape(
                "coupling apply",
                format!("index {max} out of range for {} rows", f.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(f.rows(), f.cols());
        for (a, &i) in self.indices.iter().enumerate() {
            let o = out.row_mut(i);
            for (b, &j) in self.indices.iter().enumerate() {
                let p = self.entry(a, b);
                if p == 0.0 {
                    continue;
                }
                for (o, &v) in o.iter_mut().zip(f.row(j)) {
                    *o += p * v;
                }
            }
        }
        Ok(out)
    }

    /// The coupling as an `N × N` dense matrix.
    pub fn to_dense(&self, n: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(n, n);
        for (a, &i) in self.indices.iter().enumerate() {
            for (b, &j) in self.indices.iter().enumerate() {
                out[(i, j)] = self.entry(a, b);
            }
        }
        out
    }
}

fn whole_graph(f: &DenseMatrix, part: &GroupPartition) -> (Vec<usize>, Vec<u8>) {
    let n = f.rows();
    let mut groups = vec![u8::MAX; n];
    for &i in &part.group0 {
        groups[i] = 0;
    }
    for &i in &part.group1 {
        groups[i] = 1;
    }
    let indices: Vec<usize> = (0..n).filter(|&i| groups[i] != u8::MAX).collect();
    let groups = indices.iter().map(|&i| groups[i]).collect();
    (indices, groups)
}

/// `P` over every node of the partition.
pub fn build_coupling_full(
    f: &DenseMatrix,
    part: &GroupPartition,
    cfg: &KernelConfig,
) -> Result<FairnessCoupling> {
    check_rows(f, part, "build_coupling_full")?;
    let (indices, groups) = whole_graph(f, part);
    Ok(FairnessCoupling::build(
        f,
        indices,
        groups,
        part.n0(),
        part.n1(),
        cfg,
        CouplingVariant::Full,
    ))
}

/// `P̃` over every node of the partition.
pub fn build_coupling_simplified(
    f: &DenseMatrix,
    part: &GroupPartition,
    cfg: &KernelConfig,
) -> Result<FairnessCoupling> {
    check_rows(f, part, "build_coupling_simplified")?;
    let (indices, groups) = whole_graph(f, part);
    Ok(FairnessCoupling::build(
        f,
        indices,
        groups,
        part.n0(),
        part.n1(),
        cfg,
        CouplingVariant::Simplified,
    ))
}

pub fn build_coupling(
    f: &DenseMatrix,
    part: &GroupPartition,
    cfg: &KernelConfig,
    variant: CouplingVariant,
) -> Result<FairnessCoupling> {
    match variant {
        CouplingVariant::Full => build_coupling_full(f, part, cfg),
        CouplingVariant::Simplified => build_coupling_simplified(f, part, cfg),
    }
}

/// Coupling restricted to `sampled0 ∪ sampled1`, normalised by the sample size.
pub fn build_coupling_sampled(
    f: &DenseMatrix,
    sampled0: &[usize],
    sampled1: &[usize],
    cfg: &KernelConfig,
    variant: CouplingVariant,
) -> Result<FairnessCoupling> {
    validate_samples(f.rows(), sampled0, sampled1)?;
    let ns = sampled0.len();
    let indices: Vec<usize> = sampled0.iter().chain(sampled1).copied().collect();
    let groups = std::iter::repeat(0u8)
        .take(ns)
        .chain(std::iter::repeat(1u8).take(ns))
        .collect();
    Ok(FairnessCoupling::build(f, indices, groups, ns, ns, cfg, variant))
}

pub(crate) fn validate_samples(n: usize, sampled0: &[usize], sampled1: &[usize]) -> Result<()> {
    if sampled0.len() != sampled1.len() {
        return Err(Error::Sample(format!(
            "sample sizes differ: {} vs {}",
            sampled0.len(),
            sampled1.len()
        )));
    }
    if sampled0.is_empty() {
        return Err(Error::Sample("sample size must be at least 1".into()));
    }
    let mut seen = vec![false; n];
    for &i in sampled0.iter().chain(sampled1) {
        if i >= n {
            return Err(Error::Sample(format!("sampled index {i} out of range for {n} nodes")));
        }
        if seen[i] {
            return Err(Error::Sample(format!("node {i} sampled more than once")));
        }
        seen[i] = true;
    }
    Ok(())
}
