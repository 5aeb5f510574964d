//! Graph storage and adjacency normalization.

use std::collections::BTreeSet;

use crate::error::{input_err, Result};
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::scalar::Scalar;

/// Train / validation / test node indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Undirected simple graph with node features, labels and splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T = f32> {
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}`, used by GCN and residual GCN layers.
    pub adjacency: CsrMatrix<T>,
    /// Binary `A+I`, the sum aggregator of GIN.
    pub sum_adjacency: CsrMatrix<T>,
    pub features: DenseMatrix<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl<T: Scalar> Graph<T> {
    pub fn new(
        edges: &[(usize, usize)],
        features: DenseMatrix<T>,
        labels: Vec<usize>,
        splits: Splits,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return input_err(format!("{} labels for {n} nodes", labels.len()));
        }
        let neighbors = neighbor_sets(edges, n)?;
        let mut seen = vec![false; n];
        for (name, set) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            for &i in set {
                if i >= n {
                    return input_err(format!("{name} split index {i} >= {n} nodes"));
                }
                if seen[i] {
                    return input_err(format!("node {i} appears in more than one split"));
                }
                seen[i] = true;
            }
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            adjacency: normalized_from_neighbors(&neighbors),
            sum_adjacency: binary_from_neighbors(&neighbors),
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Same graph under the node relabelling `old index -> perm[old]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut inverse = vec![usize::MAX; n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return input_err("not a permutation");
            }
            inverse[new] = old;
        }
        let mut edges = Vec::new();
        for u in 0..n {
            for (v, _) in self.sum_adjacency.row(u) {
                if u < v {
                    edges.push((perm[u], perm[v]));
                }
            }
        }
        let features = self.features.select_rows(&inverse);
        let labels = inverse.iter().map(|&old| self.labels[old]).collect();
        let map = |s: &[usize]| s.iter().map(|&i| perm[i]).collect();
        let splits = Splits { train: map(&self.splits.train), val: map(&self.splits.val), test: map(&self.splits.test) };
        Self::new(&edges, features, labels, splits)
    }
}

/// Deduplicated neighbor sets including the self loop.
fn neighbor_sets(edges: &[(usize, usize)], num_nodes: usize) -> Result<Vec<BTreeSet<usize>>> {
    let mut sets: Vec<BTreeSet<usize>> = (0..num_nodes).map(|i| BTreeSet::from([i])).collect();
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return input_err(format!("edge ({u}, {v}) has an endpoint >= {num_nodes}"));
        }
        sets[u].insert(v);
        sets[v].insert(u);
    }
    Ok(sets)
}

fn normalized_from_neighbors<T: Scalar>(sets: &[BTreeSet<usize>]) -> CsrMatrix<T> {
    let degree: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
    build_csr(sets, |u, v| T::lit(1.0 / (degree[u] * degree[v]).sqrt()))
}

fn binary_from_neighbors<T: Scalar>(sets: &[BTreeSet<usize>]) -> CsrMatrix<T> {
    build_csr(sets, |_, _| T::one())
}

fn build_csr<T: Scalar>(sets: &[BTreeSet<usize>], value: impl Fn(usize, usize) -> T) -> CsrMatrix<T> {
    let n = sets.len();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for (u, set) in sets.iter().enumerate() {
        for &v in set {
            cols.push(v);
            vals.push(value(u, v));
        }
        offsets.push(cols.len());
    }
    CsrMatrix::new(n, n, offsets, cols, vals).expect("neighbor sets yield a valid CSR")
}

/// `Â = D̃^{-1/2}(A+I)D̃^{-1/2}` for an undirected edge list.
///
/// Duplicate edges and explicit self loops collapse; every node ends up with
/// exactly one self loop, so isolated nodes have degree 1. Entry `(u, v)` is
/// `1/√(d̃_u·d̃_v)`, a commutative expression, so the result is exactly
/// symmetric.
pub fn normalize_adjacency<T: Scalar>(
    edges: &[(usize, usize)],
    num_nodes: usize,
) -> Result<CsrMatrix<T>> {
    Ok(normalized_from_neighbors(&neighbor_sets(edges, num_nodes)?))
}

/// Binary `A + I` with duplicates collapsed.
pub fn self_loop_adjacency<T: Scalar>(
    edges: &[(usize, usize)],
    num_nodes: usize,
) -> Result<CsrMatrix<T>> {
    Ok(binary_from_neighbors(&neighbor_sets(edges, num_nodes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::spmm;

    /// Dense `D̃^{-1/2}(A+I)D̃^{-1/2}` computed the textbook way.
    fn dense_oracle(edges: &[(usize, usize)], n: usize) -> DenseMatrix<f64> {
        let mut a = DenseMatrix::<f64>::identity(n);
        for &(u, v) in edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        DenseMatrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()))
    }

    #[test]
    fn small_examples() {
        let one = normalize_adjacency::<f64>(&[], 1).unwrap();
        assert_eq!(one.to_dense().data(), &[1.0]);

        let two = normalize_adjacency::<f64>(&[(0, 1)], 2).unwrap();
        assert_eq!(two.to_dense().data(), &[0.5, 0.5, 0.5, 0.5]);

        let path = normalize_adjacency::<f64>(&[(0, 1), (1, 2)], 3).unwrap().to_dense();
        let oracle = dense_oracle(&[(0, 1), (1, 2)], 3);
        assert!(path.max_abs_diff(&oracle).unwrap() < 1e-15);
        assert!((path.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((path.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((path.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(path.get(0, 2), 0.0);
    }

    #[test]
    fn duplicates_and_self_loops_collapse() {
        let messy = normalize_adjacency::<f32>(&[(0, 1), (1, 0), (0, 1), (1, 1), (2, 2)], 3).unwrap();
        let clean = normalize_adjacency::<f32>(&[(0, 1)], 3).unwrap();
        assert_eq!(messy, clean);
        assert_eq!(clean.to_dense().get(2, 2), 1.0);
    }

    #[test]
    fn out_of_range_endpoint_rejected() {
        assert!(normalize_adjacency::<f32>(&[(0, 3)], 3).is_err());
    }

    #[test]
    fn regular_graph_rows_sum_to_one() {
        // 6-cycle: every node has degree 3 after the self loop.
        let edges: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        let a = normalize_adjacency::<f32>(&edges, 6).unwrap();
        assert!(a.is_symmetric());
        let ones = DenseMatrix::filled(6, 1, 1.0f32);
        let sums = spmm(&a, &ones).unwrap();
        for (s, r) in sums.data().iter().zip(a.row_sums()) {
            assert_eq!(*s, r);
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn graph_validates_splits() {
        let feats = DenseMatrix::<f32>::zeros(3, 2);
        let overlap = Splits { train: vec![0], val: vec![0], test: vec![2] };
        assert!(Graph::new(&[(0, 1)], feats.clone(), vec![0, 1, 0], overlap).is_err());
        let oob = Splits { train: vec![5], val: vec![], test: vec![] };
        assert!(Graph::new(&[(0, 1)], feats.clone(), vec![0, 1, 0], oob).is_err());
        let ok = Splits { train: vec![0], val: vec![1], test: vec![2] };
        let g = Graph::new(&[(0, 1)], feats, vec![0, 1, 0], ok).unwrap();
        assert_eq!(g.num_classes, 2);
        assert_eq!(g.sum_adjacency.nnz(), 5);
    }
}
