//! Supermask mathematics.
//!
//! A score tensor ranks its weights by `|s|`. Pruning sparsity `k` removes the
//! `⌊k·|S|⌋` lowest-ranked entries, ties broken by ascending flat index so
//! every mask has an exact, platform-independent cardinality. A multicoated
//! mask stacks `N` such masks with non-decreasing sparsities; because they
//! share one ranking the coats are nested and the sum per weight is an integer
//! in `0..=N`.

use std::cmp::Ordering;

use crate::error::{input_err, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Guards `⌊k·n⌋` against products like `0.15 × 100 = 14.999…`.
const FLOOR_SLACK: f64 = 1e-9;

/// Single-coated (S-Sup) or multicoated (M-Sup) supermask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Single,
    Multicoat,
}

/// How the sparsity list of a multicoated mask is derived from `k₁`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    Uniform,
    /// Linear thresholds without a cutoff.
    Linear,
    /// Linear thresholds; coats whose threshold reaches `α` are dropped.
    AdaptiveLinear,
}

/// Whether the pruning threshold is computed per score tensor or over all
/// score tensors of the model at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdScope {
    PerLayer,
    Global,
}

pub const DEFAULT_ALPHA: f64 = 0.9996;

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityPlan {
    pub kind: MaskKind,
    pub mode: ThresholdMode,
    /// Requested coat count `N` (before any adaptive invalidation).
    pub coats: usize,
    pub base_sparsity: f64,
    pub alpha: f64,
    /// Sparsity list `𝒦` currently in force, valid coats only.
    pub sparsities: Vec<f64>,
    pub scope: ThresholdScope,
}

impl SparsityPlan {
    /// S-Sup at sparsity `k`.
    pub fn single(k: f64) -> Self {
        Self {
            kind: MaskKind::Single,
            mode: ThresholdMode::Uniform,
            coats: 1,
            base_sparsity: k,
            alpha: DEFAULT_ALPHA,
            sparsities: vec![k],
            scope: ThresholdScope::PerLayer,
        }
    }

    /// M-Sup with `coats` coats. Linear modes start from the uniform list
    /// until [`SparsityPlan::resolve_linear`] supplies pre-trained scores.
    pub fn multicoat(base_sparsity: f64, coats: usize, mode: ThresholdMode) -> Self {
        Self {
            kind: MaskKind::Multicoat,
            mode,
            coats,
            base_sparsity,
            alpha: DEFAULT_ALPHA,
            sparsities: uniform_sparsities(base_sparsity, coats.max(1)),
            scope: ThresholdScope::PerLayer,
        }
    }

    /// M-Sup with an explicit sparsity list.
    pub fn with_sparsities(sparsities: Vec<f64>) -> Self {
        let mut plan = Self::multicoat(sparsities.first().copied().unwrap_or(0.0), sparsities.len(), ThresholdMode::Uniform);
        plan.sparsities = sparsities;
        plan
    }

    pub fn with_scope(mut self, scope: ThresholdScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_sparsities(&self.sparsities)?;
        if self.coats == 0 {
            return input_err("coat count must be at least 1");
        }
        if self.kind == MaskKind::Single && self.sparsities.len() != 1 {
            return input_err("S-Sup takes exactly one sparsity");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return input_err(format!("alpha = {} outside (0, 1]", self.alpha));
        }
        Ok(())
    }

    pub fn needs_pretraining(&self) -> bool {
        self.kind == MaskKind::Multicoat
            && self.coats > 1
            && matches!(self.mode, ThresholdMode::Linear | ThresholdMode::AdaptiveLinear)
    }

    /// Cutoff applied by [`linear_thresholds`]: `α` for the adaptive mode,
    /// `1.0` (no cutoff) otherwise.
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            ThresholdMode::AdaptiveLinear => self.alpha,
            _ => 1.0,
        }
    }

    /// Replaces the sparsity list using the Linear rule on pre-trained scores.
    pub fn resolve_linear<T: Scalar>(&mut self, pretrained: &[&DenseMatrix<T>]) -> Result<LinearResolution> {
        let res = resolve_linear_sparsities(pretrained, self.base_sparsity, self.coats, self.effective_alpha())?;
        self.sparsities = res.sparsities.clone();
        Ok(res)
    }
}

fn validate_sparsities(k: &[f64]) -> Result<()> {
    if k.is_empty() {
        return input_err("sparsity list is empty");
    }
    if let Some(bad) = k.iter().find(|v| !(0.0..1.0).contains(*v)) {
        return input_err(format!("sparsity {bad} outside [0, 1)"));
    }
    if k.windows(2).any(|w| w[0] > w[1]) {
        return input_err("sparsity list must be non-decreasing");
    }
    Ok(())
}

/// Number of entries pruned at sparsity `k`: `⌊k·len⌋`.
pub fn pruned_count(k: f64, len: usize) -> usize {
    ((k * len as f64 + FLOOR_SLACK).floor() as usize).min(len)
}

fn cmp_key<T: Scalar>(mags: &[T], a: usize, b: usize) -> Ordering {
    mags[a].as_f64().total_cmp(&mags[b].as_f64()).then(a.cmp(&b))
}

fn magnitudes<T: Scalar>(sets: &[&DenseMatrix<T>]) -> Result<Vec<T>> {
    let mags: Vec<T> = sets.iter().flat_map(|s| s.data().iter().map(|v| v.abs())).collect();
    if mags.is_empty() {
        return input_err("score tensor is empty");
    }
    Ok(mags)
}

/// Position of every entry in ascending `(|s|, index)` order.
fn ranks<T: Scalar>(mags: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mags.len()).collect();
    order.sort_unstable_by(|&a, &b| cmp_key(mags, a, b));
    let mut rank = vec![0; mags.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }
    rank
}

/// Magnitude of the first surviving score at sparsity `k`; `0` for `k = 0`.
///
/// With ties at the threshold, lower flat indices are pruned first, so the
/// returned value alone does not decide every tie; masks are built from the
/// ranking instead.
pub fn threshold_for_sparsity<T: Scalar>(scores: &DenseMatrix<T>, k: f64) -> Result<T> {
    validate_sparsities(&[k])?;
    let mags = magnitudes(&[scores])?;
    let p = pruned_count(k, mags.len());
    if p == 0 {
        return Ok(T::zero());
    }
    let mut idx: Vec<usize> = (0..mags.len()).collect();
    let (_, nth, _) = idx.select_nth_unstable_by(p, |&a, &b| cmp_key(&mags, a, b));
    Ok(mags[*nth])
}

/// Binary supermask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// S-Sup mask over the concatenation of `sets` (one threshold for all).
///
/// Found by selecting the last pruned entry rather than sorting, which keeps
/// this path independent of [`multicoat_masks`].
pub fn single_mask_global<T: Scalar>(sets: &[&DenseMatrix<T>], k: f64) -> Result<Vec<BinaryMask>> {
    validate_sparsities(&[k])?;
    let mags = magnitudes(sets)?;
    let p = pruned_count(k, mags.len());
    let keep: Vec<bool> = if p == 0 {
        vec![true; mags.len()]
    } else {
        let mut idx: Vec<usize> = (0..mags.len()).collect();
        let last_pruned = *idx.select_nth_unstable_by(p - 1, |&a, &b| cmp_key(&mags, a, b)).1;
        (0..mags.len()).map(|i| cmp_key(&mags, i, last_pruned) == Ordering::Greater).collect()
    };
    let mut offset = 0;
    Ok(sets
        .iter()
        .map(|s| {
            let bits = keep[offset..offset + s.len()].to_vec();
            offset += s.len();
            BinaryMask { rows: s.rows(), cols: s.cols(), bits }
        })
        .collect())
}

/// `ℋ(S, k)`: keeps entries with `|s| ≥ s_threshold`.
pub fn single_mask<T: Scalar>(scores: &DenseMatrix<T>, k: f64) -> Result<BinaryMask> {
    Ok(single_mask_global(&[scores], k)?.remove(0))
}

/// Per-weight coat counts `Σₙ ℋ(S, kₙ)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoatMaskSum {
    rows: usize,
    cols: usize,
    coats: usize,
    counts: Vec<u8>,
}

impl CoatMaskSum {
    pub fn new(rows: usize, cols: usize, coats: usize, counts: Vec<u8>) -> Result<Self> {
        if counts.len() != rows * cols {
            return input_err("coat counts do not match the shape");
        }
        if coats > u8::MAX as usize || counts.iter().any(|&c| c as usize > coats) {
            return input_err("coat count exceeds the number of coats");
        }
        Ok(Self { rows, cols, coats, counts })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn coats(&self) -> usize {
        self.coats
    }

    pub fn counts(&self) -> &[u8] {
        &self.counts
    }

    /// Binary mask of coat `n` (0-based): entries covered by more than `n` coats.
    pub fn coat(&self, n: usize) -> BinaryMask {
        BinaryMask { rows: self.rows, cols: self.cols, bits: self.counts.iter().map(|&c| c as usize > n).collect() }
    }

    pub fn coat_popcount(&self, n: usize) -> usize {
        self.counts.iter().filter(|&&c| c as usize > n).count()
    }

    /// Entries that survive at least one coat.
    pub fn nonzero(&self) -> usize {
        self.coat_popcount(0)
    }

    pub fn multiplier<T: Scalar>(&self) -> DenseMatrix<T> {
        DenseMatrix::from_vec(self.rows, self.cols, self.counts.iter().map(|&c| T::lit(c as f64)).collect())
            .expect("shape checked at construction")
    }
}

impl From<BinaryMask> for CoatMaskSum {
    fn from(m: BinaryMask) -> Self {
        let counts = m.bits.iter().map(|&b| b as u8).collect();
        Self { rows: m.rows, cols: m.cols, coats: 1, counts }
    }
}

/// M-Sup coat counts over the concatenation of `sets`.
pub fn multicoat_masks_global<T: Scalar>(sets: &[&DenseMatrix<T>], sparsities: &[f64]) -> Result<Vec<CoatMaskSum>> {
    validate_sparsities(sparsities)?;
    let mags = magnitudes(sets)?;
    let rank = ranks(&mags);
    let cuts: Vec<usize> = sparsities.iter().map(|&k| pruned_count(k, mags.len())).collect();
    let mut offset = 0;
    Ok(sets
        .iter()
        .map(|s| {
            let counts = rank[offset..offset + s.len()]
                .iter()
                .map(|&r| cuts.iter().filter(|&&cut| r >= cut).count() as u8)
                .collect();
            offset += s.len();
            CoatMaskSum { rows: s.rows(), cols: s.cols(), coats: sparsities.len(), counts }
        })
        .collect())
}

pub fn multicoat_masks<T: Scalar>(scores: &DenseMatrix<T>, sparsities: &[f64]) -> Result<CoatMaskSum> {
    Ok(multicoat_masks_global(&[scores], sparsities)?.remove(0))
}

/// `W_rand ⊙ Σₙ ℋ(S, kₙ)`.
pub fn effective_weight<T: Scalar>(w_rand: &DenseMatrix<T>, counts: &CoatMaskSum) -> Result<DenseMatrix<T>> {
    if w_rand.shape() != (counts.rows, counts.cols) {
        return input_err(format!(
            "weight shape {:?} does not match mask shape {:?}",
            w_rand.shape(),
            (counts.rows, counts.cols)
        ));
    }
    let data = w_rand.data().iter().zip(&counts.counts).map(|(&w, &c)| w * T::lit(c as f64)).collect();
    DenseMatrix::from_vec(counts.rows, counts.cols, data)
}

/// `kₙ = k₁ + (1 − k₁)(n − 1)/N`.
pub fn uniform_sparsities(k1: f64, coats: usize) -> Vec<f64> {
    (0..coats).map(|n| k1 + (1.0 - k1) * n as f64 / coats as f64).collect()
}

/// Live sparsity list at epoch `t` of `total`: `𝒦·2t/T` for `t < T/2`, then `𝒦`.
pub fn decay_schedule(sparsities: &[f64], t: usize, total: usize) -> Vec<f64> {
    if 2 * t < total {
        let factor = 2.0 * t as f64 / total as f64;
        sparsities.iter().map(|k| k * factor).collect()
    } else {
        sparsities.to_vec()
    }
}

/// Analytic average cost `1 + Σ_{n=1}^{N−1} kₙ` bits per weight.
pub fn bits_per_weight(sparsities: &[f64]) -> f64 {
    let n = sparsities.len();
    1.0 + sparsities.iter().take(n.saturating_sub(1)).sum::<f64>()
}

/// Exact size of the nested bitmap encoding: one bit per weight for the
/// first coat, then one bit per survivor of coat `n` for coat `n + 1`.
pub fn nested_encoding_bits(sparsities: &[f64], len: usize) -> usize {
    let n = sparsities.len();
    if n == 0 {
        return 0;
    }
    len + sparsities[..n - 1].iter().map(|&k| len - pruned_count(k, len)).sum::<usize>()
}

/// Min-max normalized score magnitudes, sorted ascending.
#[derive(Clone, Debug)]
pub struct NormalizedScores {
    sorted: Vec<f64>,
}

impl NormalizedScores {
    pub fn from_sets<T: Scalar>(sets: &[&DenseMatrix<T>]) -> Result<Self> {
        let mags: Vec<f64> = magnitudes(sets)?.into_iter().map(|m| m.as_f64()).collect();
        let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut sorted: Vec<f64> =
            mags.iter().map(|&m| if span > 0.0 { (m - lo) / span } else { 0.0 }).collect();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    /// Builds directly from values already in `[0, 1]`.
    pub fn from_normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return input_err("normalized scores must be non-empty and within [0, 1]");
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of scores strictly below `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v < x) as f64 / self.sorted.len() as f64
    }

    /// Normalized threshold of sparsity `k` (value of the first survivor).
    pub fn threshold(&self, k: f64) -> f64 {
        self.sorted[pruned_count(k, self.len()).min(self.len() - 1)]
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let n = self.sorted.len() as f64;
        let mean = self.sorted.iter().sum::<f64>() / n;
        (self.sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// One coat of the Linear rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinearCoat {
    Valid { threshold: f64, sparsity: f64 },
    /// `φ`: the threshold reached `α`; the coat is dropped.
    Invalid { threshold: f64 },
}

impl LinearCoat {
    pub fn is_valid(&self) -> bool {
        matches!(self, LinearCoat::Valid { .. })
    }
}

/// Linear thresholds `s_{t_n} = s_{t_1} + (3σ_s/N)(n − 1)`.
///
/// A coat is kept only if its threshold is below `alpha`; `alpha ≥ 1` disables
/// the cutoff. The first coat is always kept. Each valid threshold is mapped
/// to an equivalent sparsity through `score_cdf`.
pub fn linear_thresholds(
    s_t1: f64,
    sigma_s: f64,
    coats: usize,
    alpha: f64,
    score_cdf: impl Fn(f64) -> f64,
) -> Result<Vec<LinearCoat>> {
    if coats == 0 {
        return input_err("Linear thresholds need at least one coat");
    }
    if !(alpha > 0.0) {
        return input_err("alpha must be positive");
    }
    let step = 3.0 * sigma_s / coats as f64;
    Ok((0..coats)
        .map(|n| {
            let threshold = s_t1 + step * n as f64;
            if n == 0 || alpha >= 1.0 || threshold < alpha {
                LinearCoat::Valid { threshold, sparsity: score_cdf(threshold) }
            } else {
                LinearCoat::Invalid { threshold }
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearResolution {
    pub coats: Vec<LinearCoat>,
    /// Sparsity list of the valid coats, usable as `𝒦`.
    pub sparsities: Vec<f64>,
}

impl LinearResolution {
    pub fn invalid_coats(&self) -> usize {
        self.coats.iter().filter(|c| !c.is_valid()).count()
    }
}

/// Linear rule applied to an already-normalized score distribution.
///
/// The first coat keeps exactly `k₁`. Later sparsities are clamped to stay
/// non-decreasing and below 1 (at most all but one score pruned), so a
/// non-adaptive coat whose threshold lies past every score degenerates to a
/// single survivor instead of an impossible `k = 1`.
pub fn resolve_linear_normalized(
    scores: &NormalizedScores,
    k1: f64,
    coats: usize,
    alpha: f64,
) -> Result<LinearResolution> {
    validate_sparsities(&[k1])?;
    let s_t1 = scores.threshold(k1);
    let coats = linear_thresholds(s_t1, scores.std(), coats, alpha, |x| scores.cdf(x))?;
    let cap = (scores.len() - 1) as f64 / scores.len() as f64;
    let mut sparsities: Vec<f64> = Vec::new();
    for coat in &coats {
        if let LinearCoat::Valid { sparsity, .. } = *coat {
            let k = match sparsities.last() {
                None => k1,
                Some(&prev) => sparsity.min(cap).max(prev),
            };
            sparsities.push(k);
        }
    }
    Ok(LinearResolution { coats, sparsities })
}

/// Linear rule over pre-trained score tensors (one global distribution).
pub fn resolve_linear_sparsities<T: Scalar>(
    pretrained: &[&DenseMatrix<T>],
    k1: f64,
    coats: usize,
    alpha: f64,
) -> Result<LinearResolution> {
    resolve_linear_normalized(&NormalizedScores::from_sets(pretrained)?, k1, coats, alpha)
}
