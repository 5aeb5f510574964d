//! Dense and CSR matrices plus the multiplication kernels every forward and
//! backward pass is built from.
//!
//! All kernels accumulate each output element in a fixed order (ascending
//! inner index), so results are bit-identical whether or not rayon splits the
//! work across threads.

use rayon::prelude::*;

use crate::error::{input_err, Result};
use crate::scalar::Scalar;

/// Rows below this count are multiplied on the calling thread.
const PAR_ROWS: usize = 64;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return input_err(format!(
                "dense matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "hadamard")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, d| if d > m { d } else { m }))
    }

    /// Column index of the largest entry in each row; first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return input_err(format!(
                "{op}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T = f32> {
    num_rows: usize,
    num_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a CSR matrix, checking offsets, column bounds and strictly
    /// increasing columns within each row.
    pub fn new(
        num_rows: usize,
        num_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_offsets.len() != num_rows + 1 {
            return input_err(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                num_rows + 1
            ));
        }
        if row_offsets[0] != 0 {
            return input_err("row_offsets[0] must be 0");
        }
        if col_indices.len() != values.len() || row_offsets[num_rows] != values.len() {
            return input_err("row_offsets, col_indices and values disagree on nnz");
        }
        for r in 0..num_rows {
            let (start, end) = (row_offsets[r], row_offsets[r + 1]);
            if start > end {
                return input_err(format!("row_offsets decrease at row {r}"));
            }
            let cols = &col_indices[start..end];
            if cols.iter().any(|&c| c >= num_cols) {
                return input_err(format!("column index out of range in row {r}"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return input_err(format!("columns not strictly increasing in row {r}"));
            }
        }
        Ok(Self { num_rows, num_cols, row_offsets, col_indices, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            num_rows: n,
            num_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Keeps every entry that is not exactly zero.
    pub fn from_dense(m: &DenseMatrix<T>) -> Self {
        let mut row_offsets = Vec::with_capacity(m.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != T::zero() {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        Self { num_rows: m.rows(), num_cols: m.cols(), row_offsets, col_indices, values }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.num_rows, self.num_cols);
        for r in 0..self.num_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `(column, value)` pairs of one row, ascending by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.num_rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.num_rows == self.num_cols && self.to_dense() == self.to_dense().transpose()
    }
}

fn for_each_out_row<T: Scalar>(out: &mut DenseMatrix<T>, f: impl Fn(usize, &mut [T]) + Sync) {
    let cols = out.cols();
    if cols == 0 {
        return;
    }
    if out.rows() >= PAR_ROWS {
        out.data_mut().par_chunks_mut(cols).enumerate().for_each(|(r, row)| f(r, row));
    } else {
        out.data_mut().chunks_mut(cols).enumerate().for_each(|(r, row)| f(r, row));
    }
}

/// Sparse × dense product `a · x`.
pub fn spmm<T: Scalar>(a: &CsrMatrix<T>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.num_cols() != x.rows() {
        return input_err(format!(
            "spmm: {}x{} sparse times {}x{} dense",
            a.num_rows(),
            a.num_cols(),
            x.rows(),
            x.cols()
        ));
    }
    let mut out = DenseMatrix::zeros(a.num_rows(), x.cols());
    for_each_out_row(&mut out, |r, row| {
        for (c, v) in a.row(r) {
            for (o, &xv) in row.iter_mut().zip(x.row(c)) {
                *o += v * xv;
            }
        }
    });
    Ok(out)
}

/// Dense × sparse product `x · w`, the kernel of a sparsified linear layer.
pub fn dense_spmm<T: Scalar>(x: &DenseMatrix<T>, w: &CsrMatrix<T>) -> Result<DenseMatrix<T>> {
    if x.cols() != w.num_rows() {
        return input_err(format!(
            "dense_spmm: {}x{} dense times {}x{} sparse",
            x.rows(),
            x.cols(),
            w.num_rows(),
            w.num_cols()
        ));
    }
    let mut out = DenseMatrix::zeros(x.rows(), w.num_cols());
    for_each_out_row(&mut out, |r, row| {
        for (k, &xv) in x.row(r).iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (c, v) in w.row(k) {
                row[c] += xv * v;
            }
        }
    });
    Ok(out)
}

/// Dense product `a · b`.
pub fn dense_matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols() != b.rows() {
        return input_err(format!(
            "dense_matmul: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for_each_out_row(&mut out, |r, row| {
        for (k, &av) in a.row(r).iter().enumerate() {
            // Node features are mostly zero (bag-of-words), skipping is a large win.
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_transpose_a<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if a.rows() != b.rows() {
        return input_err(format!(
            "matmul_transpose_a: ({}x{})ᵀ times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    let mut out = DenseMatrix::zeros(a.cols(), b.cols());
    for_each_out_row(&mut out, |k, row| {
        for i in 0..a.rows() {
            let av = a.get(i, k);
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(b.row(i)) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_transpose_b<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if a.cols() != b.cols() {
        return input_err(format!(
            "matmul_transpose_b: {}x{} times ({}x{})ᵀ",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.rows());
    for_each_out_row(&mut out, |r, row| {
        let ar = a.row(r);
        for (k, o) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&x, &y) in ar.iter().zip(b.row(k)) {
                acc += x * y;
            }
            *o = acc;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize, density: f64) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(r, c, |_, _| {
            if rng.random_bool(density) {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn identity_and_zero_products() {
        let x = DenseMatrix::from_vec(3, 2, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(spmm(&CsrMatrix::identity(3), &x).unwrap(), x);
        let empty = CsrMatrix::<f32>::new(3, 3, vec![0; 4], vec![], vec![]).unwrap();
        assert_eq!(spmm(&empty, &x).unwrap(), DenseMatrix::zeros(3, 2));
        assert_eq!(dense_matmul(&x, &DenseMatrix::identity(2)).unwrap(), x);
        let a = DenseMatrix::from_vec(1, 1, vec![2.0f32]).unwrap();
        let b = DenseMatrix::from_vec(1, 1, vec![3.0f32]).unwrap();
        assert_eq!(dense_matmul(&a, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn products_match_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_dense(&mut rng, 3, 4, 1.0);
        let b = random_dense(&mut rng, 4, 2, 1.0);
        assert!(dense_matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap() < 1e-12);

        let s = random_dense(&mut rng, 5, 5, 0.4);
        let x = random_dense(&mut rng, 5, 3, 1.0);
        let got = spmm(&CsrMatrix::from_dense(&s), &x).unwrap();
        assert!(got.max_abs_diff(&naive(&s, &x)).unwrap() < 1e-12);

        for n in [1usize, 7, 33, 64] {
            let s = random_dense(&mut rng, n, n, 0.3);
            let x = random_dense(&mut rng, n, n / 2 + 1, 1.0);
            let oracle = naive(&s, &x);
            assert!(spmm(&CsrMatrix::from_dense(&s), &x).unwrap().max_abs_diff(&oracle).unwrap() < 1e-6);
            let w = random_dense(&mut rng, n / 2 + 1, 5, 0.5);
            let oracle = naive(&x, &w);
            let got = dense_spmm(&x, &CsrMatrix::from_dense(&w)).unwrap();
            assert!(got.max_abs_diff(&oracle).unwrap() < 1e-9);
        }
    }

    #[test]
    fn transposed_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_dense(&mut rng, 6, 4, 0.7);
        let b = random_dense(&mut rng, 6, 3, 1.0);
        let c = random_dense(&mut rng, 5, 4, 1.0);
        let ta = matmul_transpose_a(&a, &b).unwrap();
        assert!(ta.max_abs_diff(&naive(&a.transpose(), &b)).unwrap() < 1e-12);
        let tb = matmul_transpose_b(&a, &c).unwrap();
        assert!(tb.max_abs_diff(&naive(&a, &c.transpose())).unwrap() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let a = DenseMatrix::<f32>::zeros(2, 3);
        assert!(dense_matmul(&a, &a).is_err());
        assert!(spmm(&CsrMatrix::identity(2), &a.transpose()).is_err());
        assert!(matmul_transpose_a(&a, &a.transpose()).is_err());
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0f32]).is_err());
    }

    #[test]
    fn csr_rejects_broken_invariants() {
        assert!(CsrMatrix::new(2, 2, vec![0, 1, 2], vec![0, 2], vec![1.0f32, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![1, 1], vec![1.0f32, 1.0]).is_err());
        assert!(CsrMatrix::new(2, 2, vec![1, 1, 2], vec![0, 1], vec![1.0f32, 1.0]).is_err());
        assert!(CsrMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0f32, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![0, 2], vec![1.0f32, 1.0]).is_ok());
    }

    #[test]
    fn parallel_rows_are_bit_identical_to_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_dense(&mut rng, 200, 200, 0.05).cast::<f32>();
        let x = random_dense(&mut rng, 200, 9, 1.0).cast::<f32>();
        let csr = CsrMatrix::from_dense(&s);
        let par = spmm(&csr, &x).unwrap();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| spmm(&csr, &x).unwrap());
        assert_eq!(par, serial);
    }
}
