use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// `max(x, 0)` elementwise; NaN passes through so divergence stays visible.
pub fn relu<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    x.map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() })
}

/// Gradient of ReLU given the pre-activation input.
pub(crate) fn relu_backward<T: Scalar>(pre: &DenseMatrix<T>, dy: &DenseMatrix<T>) -> DenseMatrix<T> {
    let data = pre.data().iter().zip(dy.data()).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect();
    DenseMatrix::from_vec(dy.rows(), dy.cols(), data).expect("same shape")
}

/// Affine batch normalization over nodes (rows), one channel per column.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

/// Saved activations of one batch-norm application.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: DenseMatrix<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![T::one(); width],
            beta: vec![T::zero(); width],
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
            eps: T::lit(1e-5),
            momentum: T::lit(0.1),
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics (`train`) or running statistics.
    /// In train mode also returns the batch mean and unbiased variance.
    pub fn forward(&self, x: &DenseMatrix<T>, train: bool) -> (DenseMatrix<T>, BnCache<T>, Option<(Vec<T>, Vec<T>)>) {
        let (n, w) = x.shape();
        let (mean, var, stats) = if train && n > 0 {
            let nf = T::lit(n as f64);
            let mut mean = vec![T::zero(); w];
            for r in 0..n {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![T::zero(); w];
            for r in 0..n {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let unbiased: Vec<T> = var.iter().map(|&s| if n > 1 { s / T::lit((n - 1) as f64) } else { s }).collect();
            var.iter_mut().for_each(|s| *s /= nf);
            (mean.clone(), var, Some((mean, unbiased)))
        } else {
            (self.running_mean.clone(), self.running_var.clone(), None)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let xhat = DenseMatrix::from_fn(n, w, |r, c| (x.get(r, c) - mean[c]) * inv_std[c]);
        let y = DenseMatrix::from_fn(n, w, |r, c| self.gamma[c] * xhat.get(r, c) + self.beta[c]);
        (y, BnCache { xhat, inv_std, batch_stats: stats.is_some() }, stats)
    }

    pub fn update_running(&mut self, mean: &[T], var: &[T]) {
        let keep = T::one() - self.momentum;
        for c in 0..self.width() {
            self.running_mean[c] = keep * self.running_mean[c] + self.momentum * mean[c];
            self.running_var[c] = keep * self.running_var[c] + self.momentum * var[c];
        }
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BnCache<T>, dy: &DenseMatrix<T>) -> (DenseMatrix<T>, Vec<T>, Vec<T>) {
        let (n, w) = dy.shape();
        let mut dgamma = vec![T::zero(); w];
        let mut dbeta = vec![T::zero(); w];
        for r in 0..n {
            for c in 0..w {
                let g = dy.get(r, c);
                dgamma[c] += g * cache.xhat.get(r, c);
                dbeta[c] += g;
            }
        }
        let dx = if cache.batch_stats {
            let nf = T::lit(n as f64);
            DenseMatrix::from_fn(n, w, |r, c| {
                self.gamma[c] * cache.inv_std[c] / nf
                    * (nf * dy.get(r, c) - dbeta[c] - cache.xhat.get(r, c) * dgamma[c])
            })
        } else {
            DenseMatrix::from_fn(n, w, |r, c| self.gamma[c] * cache.inv_std[c] * dy.get(r, c))
        };
        (dx, dgamma, dbeta)
    }
}
