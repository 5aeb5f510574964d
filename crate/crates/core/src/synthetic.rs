//! Seeded stochastic block model graphs and a dense logistic baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{input_err, Error, Result};
use crate::graph::{Graph, Split, Splits};
use crate::matrix::{dense_matmul, matmul_transpose_a, DenseMatrix};
use crate::scalar::Scalar;
use crate::trainer::{accuracy, cross_entropy_loss};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to the indicator features.
    pub feature_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 60 nodes, two communities, `p_in = 0.5`, `p_out = 0.02`, 16 features
    /// with noise 0.2.
    pub fn small_sbm(seed: u64) -> Self {
        Self { num_nodes: 60, num_communities: 2, p_in: 0.5, p_out: 0.02, feature_dim: 16, feature_noise: 0.2, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_communities == 0 || self.num_nodes < self.num_communities {
            return input_err("need at least one node per community");
        }
        if self.feature_dim < self.num_communities {
            return input_err("feature_dim must be at least the community count");
        }
        for p in [self.p_in, self.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return input_err(format!("probability {p} outside [0, 1]"));
            }
        }
        if !(self.feature_noise >= 0.0) {
            return input_err("feature noise must be non-negative");
        }
        Ok(())
    }
}

/// Community of node `i` when `n` nodes are split into `c` contiguous blocks.
fn community(i: usize, n: usize, c: usize) -> usize {
    i * c / n
}

/// SBM graph: labels are community ids, features are the community indicator
/// plus Gaussian noise, and each community is split 10/20/70 into
/// train/val/test (at least one training node per community).
pub fn generate_sbm<T: Scalar>(spec: &SyntheticSpec) -> Result<Graph<T>> {
    spec.validate()?;
    let (n, c) = (spec.num_nodes, spec.num_communities);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..n).map(|i| community(i, n, c)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| Error::Input(e.to_string()))?;
    let features = DenseMatrix::from_fn(n, spec.feature_dim, |r, col| {
        let indicator = if col == labels[r] { 1.0 } else { 0.0 };
        T::lit(indicator + noise.sample(&mut rng))
    });
    let mut splits = Splits::default();
    for k in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        for i in (1..members.len()).rev() {
            members.swap(i, rng.random_range(0..=i));
        }
        let m = members.len();
        let train = ((m as f64 * 0.1).round() as usize).max(1);
        let val = ((m as f64 * 0.2).round() as usize).min(m - train);
        splits.train.extend_from_slice(&members[..train]);
        splits.val.extend_from_slice(&members[train..train + val]);
        splits.test.extend_from_slice(&members[train + val..]);
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort_unstable();
    }
    Graph::new(&edges, features, labels, splits)
}

/// Softmax regression on raw features (bias via a constant column), trained
/// by full-batch gradient descent on the train split. Returns test accuracy.
pub fn dense_logistic_baseline<T: Scalar>(graph: &Graph<T>, epochs: usize, lr: f64) -> Result<f64> {
    let (n, f) = graph.features.shape();
    let x = DenseMatrix::from_fn(n, f + 1, |r, c| if c < f { graph.features.get(r, c) } else { T::one() });
    let classes = graph.num_classes;
    let mut w = DenseMatrix::<T>::zeros(f + 1, classes);
    let train = graph.splits.get(Split::Train);
    for _ in 0..epochs {
        let logits = dense_matmul(&x, &w)?;
        let (_, dlogits) = cross_entropy_loss(&logits, &graph.labels, train)?;
        let grad = matmul_transpose_a(&x, &dlogits)?;
        for (wv, g) in w.data_mut().iter_mut().zip(grad.data()) {
            *wv -= T::lit(lr) * *g;
        }
    }
    let logits = dense_matmul(&x, &w)?;
    Ok(accuracy(&logits, &graph.labels, graph.splits.get(Split::Test)))
}
