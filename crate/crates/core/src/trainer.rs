//! Score-only training: full-batch cross-entropy, straight-through score
//! gradients, Adam, and the epoch-level sparsity ramp.

use crate::error::{input_err, Error, Result};
use crate::graph::{Graph, Split};
use crate::matrix::DenseMatrix;
use crate::model::{EffectiveGradients, Mode, Model, ModelSpec};
use crate::scalar::Scalar;
use crate::supermask::{decay_schedule, LinearResolution, SparsityPlan};

/// How the mask-sum is bypassed in the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StraightThrough {
    /// `∂(Σℋ)/∂s := 1`.
    Summed,
    /// One pass-through per coat: gradients scaled by the coat count.
    PerCoat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub straight_through: StraightThrough,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 0.01,
            weight_decay: 0.0,
            eval_every: 1,
            seed: 0,
            straight_through: StraightThrough::Summed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return input_err("epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return input_err(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return input_err(format!("invalid weight decay {}", self.weight_decay));
        }
        if self.eval_every == 0 {
            return input_err("eval_every must be at least 1");
        }
        Ok(())
    }
}

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            first_moment: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of every tensor in `params`. Weight decay is applied to
    /// the first `decayed` tensors only.
    pub fn step(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        lr: f64,
        weight_decay: f64,
        decayed: usize,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Internal("optimizer state does not match parameters".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (eps, lr_t) = (T::lit(self.eps), T::lit(lr));
        let one = T::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return Err(Error::Internal(format!("tensor {i} changed size")));
            }
            let decay = if i < decayed && weight_decay > 0.0 { T::lit(lr * weight_decay) } else { T::zero() };
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= decay * p[j];
                p[j] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Mean negative log-softmax over `index_set` and its gradient.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &DenseMatrix<T>,
    labels: &[usize],
    index_set: &[usize],
) -> Result<(f64, DenseMatrix<T>)> {
    if index_set.is_empty() {
        return input_err("cross-entropy over an empty index set");
    }
    let classes = logits.cols();
    let mut grad = DenseMatrix::zeros(logits.rows(), classes);
    let scale = 1.0 / index_set.len() as f64;
    let mut loss = 0.0;
    for &i in index_set {
        let (Some(&y), true) = (labels.get(i), i < logits.rows()) else {
            return input_err(format!("node {i} outside logits/labels"));
        };
        if y >= classes {
            return input_err(format!("label {y} of node {i} outside [0, {classes})"));
        }
        let row: Vec<f64> = logits.row(i).iter().map(|v| v.as_f64()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let g = grad.row_mut(i);
        for (c, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            g[c] = T::lit((p - if c == y { 1.0 } else { 0.0 }) * scale);
        }
    }
    Ok((loss * scale, grad))
}

/// `∂ℒ/∂s = ∂ℒ/∂W_eff ⊙ w_rand ⊙ sign(s)`, summed over every link using the
/// score set. The mask-sum passes gradients straight through to `|s|`, which
/// is what masks rank by; `sign(s)` is the derivative of `|s|`.
pub fn backward_scores<T: Scalar>(
    model: &Model<T>,
    grads: &EffectiveGradients<T>,
    mode: StraightThrough,
) -> Result<Vec<DenseMatrix<T>>> {
    let layout = model.layout();
    if grads.weights.len() != layout.links.len() {
        return Err(Error::Internal("stale gradients: link count changed".into()));
    }
    let scale = match mode {
        StraightThrough::Summed => T::one(),
        StraightThrough::PerCoat => T::lit(model.spec.plan.sparsities.len() as f64),
    };
    let mut out: Vec<DenseMatrix<T>> = layout.score_shapes.iter().map(|&(r, c)| DenseMatrix::zeros(r, c)).collect();
    for (link, dw) in layout.links.iter().zip(&grads.weights) {
        let w = &model.weights[link.weight].w_rand;
        let dst = out[link.score].data_mut();
        for ((d, &g), &wr) in dst.iter_mut().zip(dw.data()).zip(w.data()) {
            *d += g * wr * scale;
        }
    }
    for (g, s) in out.iter_mut().zip(&model.scores) {
        for (d, &sv) in g.data_mut().iter_mut().zip(s.data()) {
            if sv < T::zero() {
                *d = -*d;
            }
        }
    }
    Ok(out)
}

/// Fraction of `index_set` whose argmax logit equals the label.
pub fn accuracy<T: Scalar>(logits: &DenseMatrix<T>, labels: &[usize], index_set: &[usize]) -> f64 {
    if index_set.is_empty() {
        return 0.0;
    }
    let pred = logits.argmax_rows();
    let hits = index_set.iter().filter(|&&i| pred[i] == labels[i]).count();
    hits as f64 / index_set.len() as f64
}

/// Eval-mode accuracy on `split` at sparsity list `live`.
pub fn evaluate<T: Scalar>(model: &Model<T>, graph: &Graph<T>, live: &[f64], split: Split) -> Result<f64> {
    let logits = model.logits(graph, live)?;
    Ok(accuracy(&logits, &graph.labels, graph.splits.get(split)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub live: Vec<f64>,
    pub loss: f64,
    pub acc_train: f64,
    pub acc_val: f64,
    pub acc_test: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Model at the best-validation epoch among those at full sparsity.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Set when the plan's sparsities came from the Linear rule.
    pub resolution: Option<LinearResolution>,
}

impl<T> TrainOutcome<T> {
    pub fn best_record(&self) -> &EpochRecord {
        self.history.iter().find(|r| r.epoch == self.best_epoch).expect("best epoch is recorded")
    }
}

/// Trains the scores of a freshly initialized model.
///
/// Linear threshold modes first train an S-Sup model at `k₁` with the same
/// seed, derive the sparsity list from its scores and then train the
/// multicoated model from scratch.
pub fn train<T: Scalar>(spec: &ModelSpec, graph: &Graph<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut spec = spec.clone();
    let mut resolution = None;
    if spec.plan.needs_pretraining() {
        let mut pre = spec.clone();
        pre.plan = SparsityPlan::single(spec.plan.base_sparsity).with_scope(spec.plan.scope);
        let pretrained = train_model(Model::new(pre)?, graph, cfg)?;
        let res = spec.plan.resolve_linear(&pretrained.model.score_refs())?;
        resolution = Some(res);
    }
    let mut outcome = train_model(Model::new(spec)?, graph, cfg)?;
    outcome.resolution = resolution;
    Ok(outcome)
}

/// Runs the training loop on an existing model, using its plan as final `𝒦`.
pub fn train_model<T: Scalar>(mut model: Model<T>, graph: &Graph<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model.spec.plan.validate()?;
    let target = model.spec.plan.sparsities.clone();
    let total = cfg.epochs;
    let sizes: Vec<usize> = model
        .scores
        .iter()
        .map(|s| s.len())
        .chain(model.norms.iter().flat_map(|n| [n.width(), n.width()]))
        .collect();
    let mut adam = AdamState::<T>::new(&sizes);
    let train_idx = graph.splits.get(Split::Train);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    for t in 1..=total {
        let live = decay_schedule(&target, t, total);
        let pass = model.forward(graph, &live, Mode::Train)?;
        let (loss, dlogits) = cross_entropy_loss(&pass.logits, &graph.labels, train_idx)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: t, loss });
        }
        let grads = model.backward_effective(graph, &pass, &dlogits)?;
        let score_grads = backward_scores(&model, &grads, cfg.straight_through)?;
        drop(pass);
        {
            let scores = model.scores.len();
            let mut params: Vec<&mut [T]> = model.scores.iter_mut().map(|s| s.data_mut()).collect();
            for n in model.norms.iter_mut() {
                params.push(&mut n.gamma);
                params.push(&mut n.beta);
            }
            let mut gref: Vec<&[T]> = score_grads.iter().map(|g| g.data()).collect();
            for (g, b) in grads.gamma.iter().zip(&grads.beta) {
                gref.push(g);
                gref.push(b);
            }
            adam.step(&mut params, &gref, cfg.learning_rate, cfg.weight_decay, scores)?;
        }
        if t % cfg.eval_every == 0 || t == total {
            let logits = model.logits(graph, &live)?;
            let record = EpochRecord {
                epoch: t,
                live,
                loss,
                acc_train: accuracy(&logits, &graph.labels, train_idx),
                acc_val: accuracy(&logits, &graph.labels, graph.splits.get(Split::Val)),
                acc_test: accuracy(&logits, &graph.labels, graph.splits.get(Split::Test)),
            };
            if 2 * t >= total && best.as_ref().is_none_or(|(v, _, _)| record.acc_val > *v) {
                best = Some((record.acc_val, t, model.clone()));
            }
            history.push(record);
        }
    }
    let (_, best_epoch, model) = best.expect("final epoch is always evaluated");
    Ok(TrainOutcome { model, history, best_epoch, resolution: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = DenseMatrix::<f64>::zeros(3, 4);
        let (loss, grad) = cross_entropy_loss(&logits, &[0, 1, 2], &[0, 2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
        assert!((grad.get(0, 0) - (0.25 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let logits = DenseMatrix::from_vec(1, 3, vec![0.0f64, 100.0, 0.0]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[1], &[0]).unwrap();
        assert!(loss < 1e-40);
        assert!(cross_entropy_loss(&logits, &[1], &[]).is_err());
        assert!(cross_entropy_loss(&logits, &[3], &[0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = DenseMatrix::from_fn(5, 3, |r, c| ((r * 5 + c * 7) % 11) as f64 * 0.37 - 1.2);
        let labels = [0, 2, 1, 1, 0];
        let idx = [0, 1, 3, 4];
        let (_, grad) = cross_entropy_loss(&logits, &labels, &idx).unwrap();
        let h = 1e-6;
        for r in 0..5 {
            for c in 0..3 {
                let mut p = logits.clone();
                p.set(r, c, logits.get(r, c) + h);
                let mut m = logits.clone();
                m.set(r, c, logits.get(r, c) - h);
                let fd = (cross_entropy_loss(&p, &labels, &idx).unwrap().0
                    - cross_entropy_loss(&m, &labels, &idx).unwrap().0)
                    / (2.0 * h);
                let g = grad.get(r, c);
                assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-3), "{r},{c}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.3f64, -0.2];
        let mut adam = AdamState::<f64>::new(&[2]);
        adam.step(&mut [&mut p], &[&[0.0, 0.0]], 0.1, 0.0, 1).unwrap();
        assert_eq!(p, vec![0.3, -0.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_sign() {
        let mut p = vec![1.0f64, 1.0];
        let mut adam = AdamState::<f64>::new(&[2]);
        adam.step(&mut [&mut p], &[&[0.5, -3.0]], 0.01, 0.0, 1).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((p[1] - (1.0 + 0.01)).abs() < 1e-8);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let target = [0.7f64, -1.3, 0.2];
        let mut p = vec![0.0f64; 3];
        let mut adam = AdamState::<f64>::new(&[3]);
        let mut dist = Vec::new();
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            adam.step(&mut [&mut p], &[&g], 0.05, 0.0, 1).unwrap();
            dist.push(p.iter().zip(&target).map(|(x, t)| (x - t).powi(2)).sum::<f64>().sqrt());
        }
        assert!(dist[99] < dist[49]);
        assert!(dist[99] < 0.1, "{}", dist[99]);
    }

    #[test]
    fn weight_decay_shrinks_only_decayed_tensors() {
        let mut a = vec![1.0f64];
        let mut b = vec![1.0f64];
        let mut adam = AdamState::<f64>::new(&[1, 1]);
        adam.step(&mut [&mut a, &mut b], &[&[0.0], &[0.0]], 0.1, 0.5, 1).unwrap();
        assert!((a[0] - 0.95).abs() < 1e-12);
        assert_eq!(b[0], 1.0);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits = DenseMatrix::from_vec(3, 2, vec![1.0f32, 0.0, 0.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1, 1], &[0, 1, 2]), 2.0 / 3.0);
        assert_eq!(accuracy(&logits, &[0, 0, 0], &[0, 2]), 1.0);
    }
}
