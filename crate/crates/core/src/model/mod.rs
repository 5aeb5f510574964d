//! Masked GNN models over frozen random weights.
//!
//! A model is a list of frozen weight sets, a list of trainable score sets
//! and a list of *links* pairing one weight set with one score set for each
//! masked linear operation, in execution order. Plain models link `(i, i)`;
//! folded residual models reuse weight sets (and, with shared masks, score
//! sets) across iterations.

mod forward;
mod layers;

pub use forward::{
    forward, gcn_forward, gin_forward, resgcn_block_forward, ForwardCache, LinearOperand, Mode,
};
pub use layers::{relu, BatchNorm, BnCache};

use crate::error::{config_err, Result};
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::rand_init::{derive_seed, kaiming_uniform_scores, InitMethod, InitSpec, SeedRole};
use crate::scalar::Scalar;
use crate::supermask::{
    effective_weight, multicoat_masks, multicoat_masks_global, single_mask, single_mask_global,
    CoatMaskSum, MaskKind, SparsityPlan, ThresholdScope,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Gcn,
    Gin,
    /// Pre-activation residual GCN: encoder conv, `l` blocks `h + conv(ReLU(BN(h)))`, linear head.
    ResGcn,
}

/// Folding of `depth` residual blocks onto `stages` reused weight sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    pub depth: usize,
    pub stages: usize,
    /// One score set per iteration instead of one per weight set.
    pub unshared: bool,
}

impl FoldSpec {
    /// Single-stage folding.
    pub fn ssf(depth: usize, unshared: bool) -> Self {
        Self { depth, stages: 1, unshared }
    }

    pub fn msf(depth: usize, stages: usize, unshared: bool) -> Self {
        Self { depth, stages, unshared }
    }

    /// The feed-forward model seen as `m = l` folding.
    pub fn unfolded(depth: usize) -> Self {
        Self { depth, stages: depth, unshared: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stages > self.depth {
            return config_err(format!("fold needs 1 <= m <= l, got m = {}, l = {}", self.stages, self.depth));
        }
        Ok(())
    }

    /// Iterations per stage, `r = ⌊l/m⌋`.
    pub fn iterations(&self) -> usize {
        self.depth / self.stages
    }

    /// Weight set used by iteration `i`: `j = i ÷ r`.
    pub fn weight_index(&self, i: usize) -> usize {
        i / self.iterations()
    }

    pub fn score_index(&self, i: usize) -> usize {
        if self.unshared {
            i
        } else {
            self.weight_index(i)
        }
    }

    pub fn weight_set_count(&self) -> usize {
        self.depth.div_ceil(self.iterations())
    }

    pub fn score_set_count(&self) -> usize {
        if self.unshared {
            self.depth
        } else {
            self.weight_set_count()
        }
    }

    pub fn weight_map(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.weight_index(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub in_dim: usize,
    pub width: usize,
    /// Layer count for GCN/GIN, residual block count `l` for ResGCN.
    pub layers: usize,
    pub num_classes: usize,
    /// ResGCN only; `None` means unfolded.
    pub fold: Option<FoldSpec>,
    pub batch_norm: bool,
    pub init: InitMethod,
    pub seed: u64,
    pub plan: SparsityPlan,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, in_dim: usize, width: usize, layers: usize, num_classes: usize, plan: SparsityPlan) -> Self {
        Self {
            architecture,
            in_dim,
            width,
            layers,
            num_classes,
            fold: None,
            batch_norm: false,
            init: InitMethod::SignedKaimingConstant,
            seed: 0,
            plan,
        }
    }

    pub fn with_fold(mut self, fold: FoldSpec) -> Self {
        self.fold = Some(fold);
        self
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.width == 0 || self.layers == 0 || self.num_classes == 0 {
            return config_err("in_dim, width, layers and classes must all be positive");
        }
        self.plan.validate().map_err(|e| crate::Error::Config(e.to_string()))?;
        if let Some(fold) = &self.fold {
            if self.architecture != Architecture::ResGcn {
                return config_err("folding is only defined for ResGCN");
            }
            if fold.depth != self.layers {
                return config_err(format!("fold depth {} != layer count {}", fold.depth, self.layers));
            }
            fold.validate()?;
        }
        Ok(())
    }

    /// Fold in effect for a ResGCN (`m = l` when unfolded).
    pub fn effective_fold(&self) -> FoldSpec {
        self.fold.unwrap_or_else(|| FoldSpec::unfolded(self.layers))
    }

    pub fn layout(&self) -> Result<Layout> {
        self.validate()?;
        Ok(match self.architecture {
            Architecture::Gcn => {
                let dims = self.dims();
                let shapes: Vec<_> = dims.windows(2).map(|d| (d[0], d[1])).collect();
                Layout {
                    links: (0..shapes.len()).map(|i| Link { weight: i, score: i }).collect(),
                    norm_widths: if self.batch_norm { dims[1..dims.len() - 1].to_vec() } else { vec![] },
                    score_shapes: shapes.clone(),
                    weight_shapes: shapes,
                }
            }
            Architecture::Gin => {
                let dims = self.dims();
                let shapes: Vec<_> = dims.windows(2).flat_map(|d| [(d[0], d[1]), (d[1], d[1])]).collect();
                Layout {
                    links: (0..shapes.len()).map(|i| Link { weight: i, score: i }).collect(),
                    norm_widths: if self.batch_norm { dims[1..].to_vec() } else { vec![] },
                    score_shapes: shapes.clone(),
                    weight_shapes: shapes,
                }
            }
            Architecture::ResGcn => {
                let fold = self.effective_fold();
                let (nw, ns) = (fold.weight_set_count(), fold.score_set_count());
                let w = self.width;
                let mut weight_shapes = vec![(self.in_dim, w)];
                weight_shapes.extend(std::iter::repeat_n((w, w), nw));
                weight_shapes.push((w, self.num_classes));
                let mut score_shapes = vec![(self.in_dim, w)];
                score_shapes.extend(std::iter::repeat_n((w, w), ns));
                score_shapes.push((w, self.num_classes));
                let mut links = vec![Link { weight: 0, score: 0 }];
                links.extend((0..self.layers).map(|i| Link { weight: 1 + fold.weight_index(i), score: 1 + fold.score_index(i) }));
                links.push(Link { weight: nw + 1, score: ns + 1 });
                Layout {
                    weight_shapes,
                    score_shapes,
                    links,
                    norm_widths: if self.batch_norm { vec![w; nw + 1] } else { vec![] },
                }
            }
        })
    }

    /// Feature widths through a GCN/GIN stack.
    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim];
        dims.extend(std::iter::repeat_n(self.width, self.layers - 1));
        dims.push(self.num_classes);
        dims
    }
}

/// One masked linear operation: which weight set and score set it uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub weight: usize,
    pub score: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub weight_shapes: Vec<(usize, usize)>,
    pub score_shapes: Vec<(usize, usize)>,
    pub links: Vec<Link>,
    pub norm_widths: Vec<usize>,
}

/// A frozen weight tensor and the recipe that regenerates it.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet<T> {
    pub init: InitSpec,
    pub w_rand: DenseMatrix<T>,
}

impl<T: Scalar> WeightSet<T> {
    pub fn generate(init: InitSpec, rows: usize, cols: usize) -> Result<Self> {
        Ok(Self { init, w_rand: init.generate(rows, cols)? })
    }
}

/// Output of a forward pass plus what backward needs.
pub struct ForwardPass<T> {
    pub logits: DenseMatrix<T>,
    pub masks: Vec<CoatMaskSum>,
    pub effective: Vec<DenseMatrix<T>>,
    pub cache: ForwardCache<T>,
}

/// Gradients with respect to each link's effective weight and to BN affine parameters.
#[derive(Clone, Debug)]
pub struct EffectiveGradients<T> {
    pub weights: Vec<DenseMatrix<T>>,
    pub gamma: Vec<Vec<T>>,
    pub beta: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub spec: ModelSpec,
    layout: Layout,
    pub weights: Vec<WeightSet<T>>,
    pub scores: Vec<DenseMatrix<T>>,
    pub norms: Vec<BatchNorm<T>>,
}

impl<T: Scalar> Model<T> {
    /// Draws all weights and scores from seeds derived from `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let layout = spec.layout()?;
        let weights = layout
            .weight_shapes
            .iter()
            .enumerate()
            .map(|(i, &(rows, cols))| {
                let init = InitSpec {
                    method: spec.init,
                    fan_in: rows,
                    base_sparsity: spec.plan.base_sparsity,
                    seed: derive_seed(spec.seed, i, SeedRole::Weight),
                };
                WeightSet::generate(init, rows, cols)
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = layout
            .score_shapes
            .iter()
            .enumerate()
            .map(|(i, &(rows, cols))| kaiming_uniform_scores(derive_seed(spec.seed, i, SeedRole::Score), rows, cols, rows))
            .collect::<Result<Vec<_>>>()?;
        let norms = layout.norm_widths.iter().map(|&w| BatchNorm::new(w)).collect();
        Ok(Self { spec, layout, weights, scores, norms })
    }

    /// Assembles a model from existing parts, checking them against the layout.
    pub fn from_parts(
        spec: ModelSpec,
        weights: Vec<WeightSet<T>>,
        scores: Vec<DenseMatrix<T>>,
        norms: Vec<BatchNorm<T>>,
    ) -> Result<Self> {
        let layout = spec.layout()?;
        let wshapes: Vec<_> = weights.iter().map(|w| w.w_rand.shape()).collect();
        let sshapes: Vec<_> = scores.iter().map(|s| s.shape()).collect();
        let nwidths: Vec<_> = norms.iter().map(|n| n.width()).collect();
        if wshapes != layout.weight_shapes || sshapes != layout.score_shapes || nwidths != layout.norm_widths {
            return config_err("model parts do not match the layout implied by the spec");
        }
        Ok(Self { spec, layout, weights, scores, norms })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn score_refs(&self) -> Vec<&DenseMatrix<T>> {
        self.scores.iter().collect()
    }

    /// Coat counts of every score set at sparsity list `live`.
    pub fn masks(&self, live: &[f64]) -> Result<Vec<CoatMaskSum>> {
        compute_masks(&self.spec.plan, &self.score_refs(), live)
    }

    /// `W_rand ⊙ Σℋ` for every link.
    pub fn effective_weights(&self, masks: &[CoatMaskSum]) -> Result<Vec<DenseMatrix<T>>> {
        effective_weights(&self.layout, &self.weights, masks)
    }

    pub fn forward(&mut self, graph: &Graph<T>, live: &[f64], mode: Mode) -> Result<ForwardPass<T>> {
        let masks = self.masks(live)?;
        let effective = self.effective_weights(&masks)?;
        let (logits, cache) = forward(&self.spec, &self.layout, graph, &effective, &self.norms, mode)?;
        if mode == Mode::Train {
            cache.apply_running_stats(&mut self.norms);
        }
        Ok(ForwardPass { logits, masks, effective, cache })
    }

    /// Eval-mode logits at sparsity list `live`.
    pub fn logits(&self, graph: &Graph<T>, live: &[f64]) -> Result<DenseMatrix<T>> {
        let masks = self.masks(live)?;
        self.logits_with_masks(graph, &masks)
    }

    pub fn logits_with_masks(&self, graph: &Graph<T>, masks: &[CoatMaskSum]) -> Result<DenseMatrix<T>> {
        let effective = self.effective_weights(masks)?;
        Ok(forward(&self.spec, &self.layout, graph, &effective, &self.norms, Mode::Eval)?.0)
    }

    pub fn backward_effective(
        &self,
        graph: &Graph<T>,
        pass: &ForwardPass<T>,
        dlogits: &DenseMatrix<T>,
    ) -> Result<EffectiveGradients<T>> {
        forward::backward(graph, &pass.effective, &self.norms, &pass.cache, dlogits)
    }
}

pub fn compute_masks<T: Scalar>(plan: &SparsityPlan, scores: &[&DenseMatrix<T>], live: &[f64]) -> Result<Vec<CoatMaskSum>> {
    match (plan.kind, plan.scope) {
        (MaskKind::Single, ThresholdScope::PerLayer) => {
            let k = single_sparsity(live)?;
            scores.iter().map(|s| Ok(single_mask(s, k)?.into())).collect()
        }
        (MaskKind::Single, ThresholdScope::Global) => {
            Ok(single_mask_global(scores, single_sparsity(live)?)?.into_iter().map(Into::into).collect())
        }
        (MaskKind::Multicoat, ThresholdScope::PerLayer) => scores.iter().map(|s| multicoat_masks(s, live)).collect(),
        (MaskKind::Multicoat, ThresholdScope::Global) => multicoat_masks_global(scores, live),
    }
}

fn single_sparsity(live: &[f64]) -> Result<f64> {
    match live {
        [k] => Ok(*k),
        _ => config_err(format!("S-Sup needs exactly one sparsity, got {}", live.len())),
    }
}

pub fn effective_weights<T: Scalar>(
    layout: &Layout,
    weights: &[WeightSet<T>],
    masks: &[CoatMaskSum],
) -> Result<Vec<DenseMatrix<T>>> {
    if masks.len() != layout.score_shapes.len() || weights.len() != layout.weight_shapes.len() {
        return config_err("mask or weight-set count does not match the layout");
    }
    layout.links.iter().map(|l| effective_weight(&weights[l.weight].w_rand, &masks[l.score])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_maps_follow_integer_division() {
        let f = FoldSpec::msf(4, 2, false);
        assert_eq!(f.iterations(), 2);
        assert_eq!(f.weight_map(), vec![0, 0, 1, 1]);
        assert_eq!(f.score_set_count(), 2);
        assert_eq!(FoldSpec::msf(4, 2, true).score_set_count(), 4);
        let ssf = FoldSpec::ssf(7, false);
        assert_eq!(ssf.weight_map(), vec![0; 7]);
        assert_eq!((ssf.weight_set_count(), ssf.score_set_count()), (1, 1));
        // l = 5, m = 2: r = 2, the trailing layer gets its own weight set.
        let rem = FoldSpec::msf(5, 2, false);
        assert_eq!(rem.weight_map(), vec![0, 0, 1, 1, 2]);
        assert_eq!(rem.weight_set_count(), 3);
        assert!(FoldSpec::msf(3, 4, false).validate().is_err());
        assert!(FoldSpec::msf(3, 0, false).validate().is_err());
    }

    #[test]
    fn layouts() {
        let plan = SparsityPlan::single(0.5);
        let gcn = ModelSpec::new(Architecture::Gcn, 10, 8, 3, 4, plan.clone()).with_batch_norm(true).layout().unwrap();
        assert_eq!(gcn.weight_shapes, vec![(10, 8), (8, 8), (8, 4)]);
        assert_eq!(gcn.norm_widths, vec![8, 8]);
        let gin = ModelSpec::new(Architecture::Gin, 10, 8, 2, 4, plan.clone()).layout().unwrap();
        assert_eq!(gin.weight_shapes, vec![(10, 8), (8, 8), (8, 4), (4, 4)]);
        let res = ModelSpec::new(Architecture::ResGcn, 10, 8, 4, 3, plan.clone())
            .with_fold(FoldSpec::msf(4, 2, true))
            .with_batch_norm(true)
            .layout()
            .unwrap();
        assert_eq!(res.weight_shapes.len(), 4);
        assert_eq!(res.score_shapes.len(), 6);
        assert_eq!(res.norm_widths.len(), 3);
        let blocks: Vec<_> = res.links[1..5].iter().map(|l| (l.weight, l.score)).collect();
        assert_eq!(blocks, vec![(1, 1), (1, 2), (2, 3), (2, 4)]);
        let bad = ModelSpec::new(Architecture::Gcn, 10, 8, 2, 4, plan).with_fold(FoldSpec::ssf(2, false));
        assert!(bad.layout().is_err());
    }

    #[test]
    fn new_model_is_seed_deterministic() {
        let spec = ModelSpec::new(Architecture::Gcn, 6, 5, 2, 3, SparsityPlan::single(0.3)).with_seed(9);
        let a = Model::<f32>::new(spec.clone()).unwrap();
        let b = Model::<f32>::new(spec.clone()).unwrap();
        assert_eq!(a, b);
        let c = Model::<f32>::new(spec.with_seed(10)).unwrap();
        assert_ne!(a.weights[0].w_rand, c.weights[0].w_rand);
        // SC weights: fan_in 6, k1 0.3 → magnitude √(2/6)·√(1/0.7).
        let mag = ((2.0f64 / 6.0).sqrt() * (1.0f64 / 0.7).sqrt()) as f32;
        assert!(a.weights[0].w_rand.data().iter().all(|v| v.abs() == mag));
    }
}
