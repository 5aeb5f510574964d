//! Forward passes of the three architectures and their manual backward passes.
//!
//! Forward functions are generic over the linear operand so the same code runs
//! with dense effective weights (training) and CSR weights (sparse inference).
//! Aggregation matrices are symmetric, so `Âᵀ·g` is computed as `Â·g`.

use super::layers::{relu, relu_backward, BatchNorm, BnCache};
use super::{Architecture, EffectiveGradients, Layout, ModelSpec};
use crate::error::{config_err, input_err, Error, Result};
use crate::graph::Graph;
use crate::matrix::{dense_matmul, dense_spmm, matmul_transpose_a, matmul_transpose_b, spmm, CsrMatrix, DenseMatrix};
use crate::scalar::Scalar;

/// Right-hand operand of a masked linear layer: computes `h · W`.
pub trait LinearOperand<T: Scalar> {
    fn shape(&self) -> (usize, usize);
    fn right_apply(&self, h: &DenseMatrix<T>) -> Result<DenseMatrix<T>>;
}

impl<T: Scalar> LinearOperand<T> for DenseMatrix<T> {
    fn shape(&self) -> (usize, usize) {
        DenseMatrix::shape(self)
    }

    fn right_apply(&self, h: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        dense_matmul(h, self)
    }
}

impl<T: Scalar> LinearOperand<T> for CsrMatrix<T> {
    fn shape(&self) -> (usize, usize) {
        (self.num_rows(), self.num_cols())
    }

    fn right_apply(&self, h: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        dense_spmm(h, self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics get updated.
    Train,
    Eval,
}

struct GcnLayer<T> {
    agg: DenseMatrix<T>,
    /// Pre-activation of hidden layers.
    pre: Option<DenseMatrix<T>>,
    bn: Option<BnCache<T>>,
}

struct GinBlock<T> {
    agg: DenseMatrix<T>,
    bn: Option<BnCache<T>>,
    pre_inner: DenseMatrix<T>,
    inner: DenseMatrix<T>,
    pre_outer: Option<DenseMatrix<T>>,
}

struct ResBlock<T> {
    norm: Option<usize>,
    bn: Option<BnCache<T>>,
    pre: DenseMatrix<T>,
    agg: DenseMatrix<T>,
}

struct ResCache<T> {
    agg0: DenseMatrix<T>,
    blocks: Vec<ResBlock<T>>,
    final_bn: Option<BnCache<T>>,
    final_pre: DenseMatrix<T>,
    final_act: DenseMatrix<T>,
}

enum CacheKind<T> {
    Gcn(Vec<GcnLayer<T>>),
    Gin(Vec<GinBlock<T>>),
    ResGcn(ResCache<T>),
}

/// Intermediates of one forward pass, consumed by backward.
pub struct ForwardCache<T> {
    kind: CacheKind<T>,
    /// `(norm index, batch mean, unbiased batch variance)` per train-mode BN use.
    stats: Vec<(usize, Vec<T>, Vec<T>)>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn apply_running_stats(&self, norms: &mut [BatchNorm<T>]) {
        for (i, mean, var) in &self.stats {
            norms[*i].update_running(mean, var);
        }
    }
}

fn check_operand<T: Scalar, W: LinearOperand<T>>(op: &W, rows: usize, cols: Option<usize>) -> Result<()> {
    let (r, c) = op.shape();
    if r != rows || cols.is_some_and(|want| want != c) {
        return input_err(format!("operand {r}x{c} does not fit input width {rows}"));
    }
    Ok(())
}

fn normalize<T: Scalar>(
    norms: &[BatchNorm<T>],
    idx: Option<usize>,
    x: DenseMatrix<T>,
    mode: Mode,
    stats: &mut Vec<(usize, Vec<T>, Vec<T>)>,
) -> Result<(DenseMatrix<T>, Option<BnCache<T>>)> {
    let Some(i) = idx else { return Ok((x, None)) };
    let bn = norms.get(i).ok_or_else(|| Error::Config(format!("missing batch norm {i}")))?;
    if bn.width() != x.cols() {
        return input_err(format!("batch norm width {} != feature width {}", bn.width(), x.cols()));
    }
    let (y, cache, s) = bn.forward(&x, mode == Mode::Train);
    if let Some((mean, var)) = s {
        stats.push((i, mean, var));
    }
    Ok((y, Some(cache)))
}

/// L-layer GCN: `H ← Â·H`, `H ← H·W_eff`, then BN (if `norms` is non-empty)
/// and ReLU on every hidden layer. Returns raw logits.
pub fn gcn_forward<T: Scalar, W: LinearOperand<T>>(
    graph: &Graph<T>,
    ops: &[W],
    norms: &[BatchNorm<T>],
    mode: Mode,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    if ops.is_empty() {
        return config_err("GCN needs at least one layer");
    }
    let use_bn = !norms.is_empty();
    let mut stats = Vec::new();
    let mut layers = Vec::with_capacity(ops.len());
    let mut h = graph.features.clone();
    for (l, op) in ops.iter().enumerate() {
        check_operand(op, h.cols(), None)?;
        let agg = spmm(&graph.adjacency, &h)?;
        let z = op.right_apply(&agg)?;
        if l + 1 < ops.len() {
            let (z, bn) = normalize(norms, use_bn.then_some(l), z, mode, &mut stats)?;
            h = relu(&z);
            layers.push(GcnLayer { agg, pre: Some(z), bn });
        } else {
            h = z;
            layers.push(GcnLayer { agg, pre: None, bn: None });
        }
    }
    Ok((h, ForwardCache { kind: CacheKind::Gcn(layers), stats }))
}

/// GIN with sum aggregation (`ε = 0`) and a two-layer masked MLP per block.
/// `ops` holds two operands per block.
pub fn gin_forward<T: Scalar, W: LinearOperand<T>>(
    graph: &Graph<T>,
    ops: &[W],
    norms: &[BatchNorm<T>],
    mode: Mode,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    if ops.is_empty() || !ops.len().is_multiple_of(2) {
        return config_err("GIN needs two operands per block");
    }
    let blocks = ops.len() / 2;
    let use_bn = !norms.is_empty();
    let mut stats = Vec::new();
    let mut cache = Vec::with_capacity(blocks);
    let mut h = graph.features.clone();
    for b in 0..blocks {
        let (w1, w2) = (&ops[2 * b], &ops[2 * b + 1]);
        check_operand(w1, h.cols(), None)?;
        check_operand(w2, w1.shape().1, None)?;
        let agg = spmm(&graph.sum_adjacency, &h)?;
        let z1 = w1.right_apply(&agg)?;
        let (pre_inner, bn) = normalize(norms, use_bn.then_some(b), z1, mode, &mut stats)?;
        let inner = relu(&pre_inner);
        let z2 = w2.right_apply(&inner)?;
        let pre_outer = if b + 1 < blocks {
            h = relu(&z2);
            Some(z2)
        } else {
            h = z2;
            None
        };
        cache.push(GinBlock { agg, bn, pre_inner, inner, pre_outer });
    }
    Ok((h, ForwardCache { kind: CacheKind::Gin(cache), stats }))
}

fn res_block<T: Scalar, W: LinearOperand<T>>(
    h: &DenseMatrix<T>,
    graph: &Graph<T>,
    op: &W,
    norms: &[BatchNorm<T>],
    norm_idx: Option<usize>,
    mode: Mode,
    stats: &mut Vec<(usize, Vec<T>, Vec<T>)>,
) -> Result<(DenseMatrix<T>, ResBlock<T>)> {
    check_operand(op, h.cols(), Some(h.cols()))?;
    let (pre, bn) = normalize(norms, norm_idx, h.clone(), mode, stats)?;
    let agg = spmm(&graph.adjacency, &relu(&pre))?;
    let out = op.right_apply(&agg)?.add(h)?;
    Ok((out, ResBlock { norm: norm_idx, bn, pre, agg }))
}

/// One pre-activation residual block: `h + Â·ReLU(BN(h))·W_eff`.
pub fn resgcn_block_forward<T: Scalar, W: LinearOperand<T>>(
    h: &DenseMatrix<T>,
    graph: &Graph<T>,
    op: &W,
    norm: Option<&BatchNorm<T>>,
    mode: Mode,
) -> Result<DenseMatrix<T>> {
    let norms: Vec<BatchNorm<T>> = norm.into_iter().cloned().collect();
    let idx = norm.map(|_| 0);
    Ok(res_block(h, graph, op, &norms, idx, mode, &mut Vec::new())?.0)
}

/// Residual GCN; `ops` follows the layout's links (encoder, one per
/// iteration, head) and block `i` uses the norm of its weight set.
fn resgcn_forward<T: Scalar, W: LinearOperand<T>>(
    spec: &ModelSpec,
    layout: &Layout,
    graph: &Graph<T>,
    ops: &[W],
    norms: &[BatchNorm<T>],
    mode: Mode,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    let use_bn = spec.batch_norm;
    let mut stats = Vec::new();
    let enc = &ops[0];
    check_operand(enc, graph.num_features(), None)?;
    let agg0 = spmm(&graph.adjacency, &graph.features)?;
    let mut h = enc.right_apply(&agg0)?;
    let mut blocks = Vec::with_capacity(spec.layers);
    for i in 0..spec.layers {
        let norm_idx = use_bn.then(|| layout.links[i + 1].weight - 1);
        let (next, block) = res_block(&h, graph, &ops[i + 1], norms, norm_idx, mode, &mut stats)?;
        h = next;
        blocks.push(block);
    }
    let final_idx = use_bn.then(|| layout.weight_shapes.len() - 2);
    let (final_pre, final_bn) = normalize(norms, final_idx, h, mode, &mut stats)?;
    let final_act = relu(&final_pre);
    let head = &ops[spec.layers + 1];
    check_operand(head, final_act.cols(), None)?;
    let logits = head.right_apply(&final_act)?;
    let cache = ResCache { agg0, blocks, final_bn, final_pre, final_act };
    Ok((logits, ForwardCache { kind: CacheKind::ResGcn(cache), stats }))
}

/// Runs the architecture of `spec` with one operand per layout link.
pub fn forward<T: Scalar, W: LinearOperand<T>>(
    spec: &ModelSpec,
    layout: &Layout,
    graph: &Graph<T>,
    ops: &[W],
    norms: &[BatchNorm<T>],
    mode: Mode,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    if ops.len() != layout.links.len() {
        return config_err(format!("{} operands for {} links", ops.len(), layout.links.len()));
    }
    if norms.len() != layout.norm_widths.len() {
        return config_err(format!("{} norms for {} expected", norms.len(), layout.norm_widths.len()));
    }
    if graph.num_features() != spec.in_dim {
        return input_err(format!("graph has {} features, model expects {}", graph.num_features(), spec.in_dim));
    }
    match spec.architecture {
        Architecture::Gcn => gcn_forward(graph, ops, norms, mode),
        Architecture::Gin => gin_forward(graph, ops, norms, mode),
        Architecture::ResGcn => resgcn_forward(spec, layout, graph, ops, norms, mode),
    }
}

struct Accum<T> {
    weights: Vec<Option<DenseMatrix<T>>>,
    gamma: Vec<Vec<T>>,
    beta: Vec<Vec<T>>,
}

impl<T: Scalar> Accum<T> {
    fn norm_backward(
        &mut self,
        norms: &[BatchNorm<T>],
        idx: usize,
        cache: &Option<BnCache<T>>,
        dy: DenseMatrix<T>,
    ) -> DenseMatrix<T> {
        let Some(c) = cache else { return dy };
        let (dx, dg, db) = norms[idx].backward(c, &dy);
        for (a, b) in self.gamma[idx].iter_mut().zip(dg) {
            *a += b;
        }
        for (a, b) in self.beta[idx].iter_mut().zip(db) {
            *a += b;
        }
        dx
    }
}

/// Backpropagates `dlogits` to every link's effective weight and to BN
/// affine parameters. Norms shared across folded blocks accumulate.
pub(crate) fn backward<T: Scalar>(
    graph: &Graph<T>,
    effective: &[DenseMatrix<T>],
    norms: &[BatchNorm<T>],
    cache: &ForwardCache<T>,
    dlogits: &DenseMatrix<T>,
) -> Result<EffectiveGradients<T>> {
    let mut acc = Accum {
        weights: vec![None; effective.len()],
        gamma: norms.iter().map(|n| vec![T::zero(); n.width()]).collect(),
        beta: norms.iter().map(|n| vec![T::zero(); n.width()]).collect(),
    };
    match &cache.kind {
        CacheKind::Gcn(layers) => {
            if layers.len() != effective.len() {
                return Err(Error::Internal("stale forward cache".into()));
            }
            let mut g = dlogits.clone();
            for (l, layer) in layers.iter().enumerate().rev() {
                if let Some(pre) = &layer.pre {
                    g = relu_backward(pre, &g);
                    g = acc.norm_backward(norms, l, &layer.bn, g);
                }
                acc.weights[l] = Some(matmul_transpose_a(&layer.agg, &g)?);
                if l > 0 {
                    g = spmm(&graph.adjacency, &matmul_transpose_b(&g, &effective[l])?)?;
                }
            }
        }
        CacheKind::Gin(blocks) => {
            if 2 * blocks.len() != effective.len() {
                return Err(Error::Internal("stale forward cache".into()));
            }
            let mut g = dlogits.clone();
            for (b, block) in blocks.iter().enumerate().rev() {
                if let Some(pre) = &block.pre_outer {
                    g = relu_backward(pre, &g);
                }
                acc.weights[2 * b + 1] = Some(matmul_transpose_a(&block.inner, &g)?);
                g = matmul_transpose_b(&g, &effective[2 * b + 1])?;
                g = relu_backward(&block.pre_inner, &g);
                g = acc.norm_backward(norms, b, &block.bn, g);
                acc.weights[2 * b] = Some(matmul_transpose_a(&block.agg, &g)?);
                if b > 0 {
                    g = spmm(&graph.sum_adjacency, &matmul_transpose_b(&g, &effective[2 * b])?)?;
                }
            }
        }
        CacheKind::ResGcn(res) => {
            let depth = res.blocks.len();
            if depth + 2 != effective.len() {
                return Err(Error::Internal("stale forward cache".into()));
            }
            let head = depth + 1;
            acc.weights[head] = Some(matmul_transpose_a(&res.final_act, dlogits)?);
            let mut g = matmul_transpose_b(dlogits, &effective[head])?;
            g = relu_backward(&res.final_pre, &g);
            if res.final_bn.is_some() {
                g = acc.norm_backward(norms, norms.len() - 1, &res.final_bn, g);
            }
            for (i, block) in res.blocks.iter().enumerate().rev() {
                acc.weights[i + 1] = Some(matmul_transpose_a(&block.agg, &g)?);
                let dact = spmm(&graph.adjacency, &matmul_transpose_b(&g, &effective[i + 1])?)?;
                let dpre = relu_backward(&block.pre, &dact);
                let dh = match block.norm {
                    Some(idx) => acc.norm_backward(norms, idx, &block.bn, dpre),
                    None => dpre,
                };
                g.add_assign(&dh)?;
            }
            acc.weights[0] = Some(matmul_transpose_a(&res.agg0, &g)?);
        }
    }
    Ok(EffectiveGradients {
        weights: acc.weights.into_iter().map(|w| w.expect("every link visited")).collect(),
        gamma: acc.gamma,
        beta: acc.beta,
    })
}
