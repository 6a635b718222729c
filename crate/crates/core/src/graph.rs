//! Attributed graphs, sensitive-group partitions and sparse propagation operators.
//!
//! The graph is undirected and stored as a deduplicated list of unordered
//! pairs. Self loops are never stored; the normalized operator adds them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Role of a node in the train/validation/test protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

/// Undirected graph with node features, binary labels and a binary sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    labels: Vec<u8>,
    sensitive: Vec<u8>,
    split: Vec<Split>,
}

impl AttributedGraph {
    /// Validates inputs and canonicalises the edge list.
    ///
    /// Edges may be given in either direction and may repeat; they are stored
    /// once as `(min, max)` in sorted order. Self loops are dropped.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: DenseMatrix,
        labels: Vec<u8>,
        sensitive: Vec<u8>,
        split: Vec<Split>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::EmptyGraph);
        }
        if features.rows() != num_nodes {
            return Err(Error::shape(
                "AttributedGraph::new",
                format!("{} feature rows for {num_nodes} nodes", features.rows()),
            ));
        }
        for (what, v) in [("labels", &labels), ("sensitive", &sensitive)] {
            if v.len() != num_nodes {
                return Err(Error::shape(
                    "AttributedGraph::new",
                    format!("{what} has length {}, expected {num_nodes}", v.len()),
                ));
            }
        }
        if split.len() != num_nodes {
            return Err(Error::shape(
                "AttributedGraph::new",
                format!("split has length {}, expected {num_nodes}", split.len()),
            ));
        }
        check_binary("label", &labels)?;
        GroupPartition::from_sensitive(&sensitive)?;

        let edges = canonical_edges(num_nodes, edges)?;
        Ok(Self {
            num_nodes,
            edges,
            features,
            labels,
            sensitive,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Unordered edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.num_nodes {
            return Err(Error::shape(
                "with_split",
                format!("split has length {}, expected {}", split.len(), self.num_nodes),
            ));
        }
        self.split = split;
        Ok(self)
    }

    pub fn with_features(mut self, features: DenseMatrix) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::shape(
                "with_features",
                format!("{} rows for {} nodes", features.rows(), self.num_nodes),
            ));
        }
        self.features = features;
        Ok(self)
    }

    /// Node indices carrying the given split tag.
    pub fn mask(&self, tag: Split) -> Vec<usize> {
        (0..self.num_nodes).filter(|&i| self.split[i] == tag).collect()
    }

    pub fn partition(&self) -> GroupPartition {
        GroupPartition::from_sensitive(&self.sensitive)
            .expect("sensitive groups validated at construction")
    }

    /// Sorted neighbour lists (no self entries).
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }
}

fn check_binary(what: &'static str, values: &[u8]) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(index) => Err(Error::NonBinary {
            what,
            index,
            value: values[index] as i64,
        }),
        None => Ok(()),
    }
}

fn canonical_edges(
    n: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::DanglingEdge(a, b));
        }
        if a != b {
            out.push((a.min(b), a.max(b)));
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Node indices split by sensitive attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    pub group0: Vec<usize>,
    pub group1: Vec<usize>,
}

impl GroupPartition {
    pub fn from_sensitive(sensitive: &[u8]) -> Result<Self> {
        check_binary("sensitive attribute", sensitive)?;
        let mut group0 = Vec::new();
        let mut group1 = Vec::new();
        for (i, &s) in sensitive.iter().enumerate() {
            if s == 0 {
                group0.push(i);
            } else {
                group1.push(i);
            }
        }
        if group0.is_empty() {
            return Err(Error::EmptyGroup(0));
        }
        if group1.is_empty() {
            return Err(Error::EmptyGroup(1));
        }
        Ok(Self { group0, group1 })
    }

    /// Partition over explicit index lists (e.g. a sample), without a backing graph.
    pub fn from_groups(group0: Vec<usize>, group1: Vec<usize>) -> Result<Self> {
        if group0.is_empty() {
            return Err(Error::EmptyGroup(0));
        }
        if group1.is_empty() {
            return Err(Error::EmptyGroup(1));
        }
        Ok(Self { group0, group1 })
    }

    pub fn n0(&self) -> usize {
        self.group0.len()
    }

    pub fn n1(&self) -> usize {
        self.group1.len()
    }

    pub fn len(&self) -> usize {
        self.n0() + self.n1()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, g: u8) -> &[usize] {
        if g == 0 {
            &self.group0
        } else {
            &self.group1
        }
    }
}

/// `partition_by_sensitive`: group index lists of a graph.
pub fn partition_by_sensitive(graph: &AttributedGraph) -> Result<GroupPartition> {
    GroupPartition::from_sensitive(graph.sensitive())
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[(i, j)] += v;
            }
        }
        out
    }

    /// `self * x`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.cols {
            return Err(Error::shape(
                "sparse apply",
                format!("{}x{} operator on {:?}", self.rows, self.cols, x.shape()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            let range = self.row_ptr[i]..self.row_ptr[i + 1];
            let o = out.row_mut(i);
            for (&j, &v) in self.col_idx[range.clone()].iter().zip(&self.values[range]) {
                for (o, &xv) in o.iter_mut().zip(x.row(j)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * x`.
    pub fn apply_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.rows {
            return Err(Error::shape(
                "sparse apply_transpose",
                format!("{}x{} operator on {:?}", self.rows, self.cols, x.shape()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.cols, x.cols());
        for i in 0..self.rows {
            let xi = x.row(i).to_vec();
            for (j, v) in self.row(i) {
                for (o, &xv) in out.row_mut(j).iter_mut().zip(&xi) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }
}

/// `Ã = D̂^{-1/2}(A + I)D̂^{-1/2}`, with `D̂` the degree matrix of `A + I`.
///
/// Applying it is the same as applying `I - L̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedOperator(SparseMatrix);

impl NormalizedOperator {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut degree = vec![1.0f64; num_nodes];
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::DanglingEdge(i, j));
            }
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut triplets = Vec::with_capacity(num_nodes + 2 * edges.len());
        for (i, s) in inv_sqrt.iter().enumerate() {
            triplets.push((i, i, s * s));
        }
        for &(i, j) in edges {
            let v = inv_sqrt[i] * inv_sqrt[j];
            triplets.push((i, j, v));
            triplets.push((j, i, v));
        }
        Ok(Self(SparseMatrix::from_triplets(num_nodes, num_nodes, triplets)))
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SparseMatrix {
        self.0
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.0.apply(x)
    }

    /// Applies `L̃ = I - Ã`.
    pub fn apply_laplacian(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.sub(&self.0.apply(x)?)
    }
}

pub fn build_normalized_adjacency(graph: &AttributedGraph) -> Result<NormalizedOperator> {
    NormalizedOperator::from_edges(graph.num_nodes(), graph.edges())
}

/// `A + (1 + eps) I` over the raw (unnormalized) adjacency.
pub fn gin_operator(graph: &AttributedGraph, eps: f64) -> SparseMatrix {
    let n = graph.num_nodes();
    let mut triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0 + eps)).collect();
    for &(i, j) in graph.edges() {
        triplets.push((i, j, 1.0));
        triplets.push((j, i, 1.0));
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

fn edge_agreement(graph: &AttributedGraph, attr: &[u8]) -> Result<f64> {
    if graph.num_edges() == 0 {
        return Err(Error::NoEdges);
    }
    let same = graph
        .edges()
        .iter()
        .filter(|&&(u, v)| attr[u] == attr[v])
        .count();
    Ok(same as f64 / graph.num_edges() as f64)
}

/// Fraction of edges whose endpoints share a label.
pub fn homophily_ratio(graph: &AttributedGraph) -> Result<f64> {
    edge_agreement(graph, graph.labels())
}

/// Fraction of edges whose endpoints share a sensitive attribute.
pub fn sensitive_homophily_ratio(graph: &AttributedGraph) -> Result<f64> {
    edge_agreement(graph, graph.sensitive())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: Vec<(usize, usize)>, labels: Vec<u8>, sens: Vec<u8>) -> AttributedGraph {
        AttributedGraph::new(
            n,
            edges,
            DenseMatrix::zeros(n, 1),
            labels,
            sens,
            vec![Split::None; n],
        )
        .unwrap()
    }

    fn dense_oracle(n: usize, edges: &[(usize, usize)]) -> DenseMatrix {
        let mut a = DenseMatrix::identity(n);
        for &(i, j) in edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        DenseMatrix::from_fn(n, n, |i, j| a[(i, j)] / (deg[i] * deg[j]).sqrt())
    }

    #[test]
    fn single_node_operator_is_one() {
        let op = NormalizedOperator::from_edges(1, &[]).unwrap();
        assert_eq!(op.matrix().to_dense().as_slice(), &[1.0]);
    }

    #[test]
    fn two_node_operator_is_all_halves() {
        let op = NormalizedOperator::from_edges(2, &[(0, 1)]).unwrap();
        for v in op.matrix().to_dense().as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_graph_is_rejected() {
        assert!(matches!(NormalizedOperator::from_edges(0, &[]), Err(Error::EmptyGraph)));
        let err = AttributedGraph::new(0, vec![], DenseMatrix::zeros(0, 1), vec![], vec![], vec![]);
        assert!(matches!(err, Err(Error::EmptyGraph)));
    }

    #[test]
    fn random_graph_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 6;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.4) {
                        edges.push((i, j));
                    }
                }
            }
            let op = NormalizedOperator::from_edges(n, &edges).unwrap();
            let dense = op.matrix().to_dense();
            let oracle = dense_oracle(n, &edges);
            assert!(dense.max_abs_diff(&oracle) < 1e-12);
            assert!(op.matrix().is_symmetric(0.0));
            for i in 0..n {
                assert!(dense[(i, i)] > 0.0);
                let row_sum: f64 = dense.row(i).iter().sum();
                let oracle_sum: f64 = oracle.row(i).iter().sum();
                assert!((row_sum - oracle_sum).abs() < 1e-12);
            }
            // applying Ã equals applying I - L̃
            let x = DenseMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            let via_l = x.sub(&op.apply_laplacian(&x).unwrap()).unwrap();
            assert!(op.apply(&x).unwrap().max_abs_diff(&via_l) < 1e-12);
        }
    }

    #[test]
    fn edges_are_symmetrized_and_deduplicated() {
        let g = graph(3, vec![(1, 0), (0, 1), (0, 1), (2, 2), (2, 1)], vec![0, 1, 0], vec![0, 1, 0]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let r = AttributedGraph::new(
            2,
            vec![(0, 5)],
            DenseMatrix::zeros(2, 1),
            vec![0, 1],
            vec![0, 1],
            vec![Split::None; 2],
        );
        assert!(matches!(r, Err(Error::DanglingEdge(0, 5))));
    }

    #[test]
    fn partition_examples() {
        let p = GroupPartition::from_sensitive(&[0, 1, 0]).unwrap();
        assert_eq!(p.group0, vec![0, 2]);
        assert_eq!(p.group1, vec![1]);
        assert_eq!((p.n0(), p.n1()), (2, 1));
        assert!(matches!(GroupPartition::from_sensitive(&[1, 1]), Err(Error::EmptyGroup(0))));
        assert!(matches!(
            GroupPartition::from_sensitive(&[0, 2]),
            Err(Error::NonBinary { index: 1, .. })
        ));
    }

    #[test]
    fn homophily_examples() {
        let g = graph(4, vec![(0, 1), (2, 3)], vec![0, 0, 1, 1], vec![0, 1, 0, 1]);
        assert_eq!(homophily_ratio(&g).unwrap(), 1.0);
        assert_eq!(sensitive_homophily_ratio(&g).unwrap(), 0.0);
        let empty = graph(2, vec![], vec![0, 1], vec![0, 1]);
        assert!(matches!(homophily_ratio(&empty), Err(Error::NoEdges)));
    }

    #[test]
    fn gin_operator_matches_dense() {
        let g = graph(3, vec![(0, 1), (1, 2)], vec![0, 1, 0], vec![0, 1, 0]);
        let d = gin_operator(&g, 0.5).to_dense();
        let expect = DenseMatrix::from_rows(&[
            vec![1.5, 1.0, 0.0],
            vec![1.0, 1.5, 1.0],
            vec![0.0, 1.0, 1.5],
        ])
        .unwrap();
        assert_eq!(d, expect);
    }

    proptest! {
        #[test]
        fn homophily_invariant_under_edge_order(
            raw in proptest::collection::vec((0usize..8, 0usize..8), 1..30),
            labels in proptest::collection::vec(0u8..2, 8),
            flip in any::<bool>(),
        ) {
            let mut sens = labels.clone();
            sens[0] = 0;
            sens[1] = 1;
            let edges: Vec<_> = raw.iter().copied().filter(|(a, b)| a != b).collect();
            prop_assume!(!edges.is_empty());
            let mut permuted: Vec<_> = edges.iter().rev().copied().collect();
            if flip {
                permuted = permuted.into_iter().map(|(a, b)| (b, a)).collect();
            }
            let g1 = graph(8, edges, labels.clone(), sens.clone());
            let g2 = graph(8, permuted, labels, sens);
            prop_assert_eq!(homophily_ratio(&g1).unwrap(), homophily_ratio(&g2).unwrap());
            prop_assert_eq!(
                sensitive_homophily_ratio(&g1).unwrap(),
                sensitive_homophily_ratio(&g2).unwrap()
            );
        }
    }
}
