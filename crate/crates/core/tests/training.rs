use sltgnn::matrix::spmm;
use sltgnn::model::{forward, ForwardPass, Mode};
use sltgnn::supermask::decay_schedule;
use sltgnn::synthetic::{dense_logistic_baseline, generate_sbm, SyntheticSpec};
use sltgnn::trainer::{backward_scores, cross_entropy_loss, evaluate, train, StraightThrough};
use sltgnn::{Architecture, DenseMatrix, Graph, Model, ModelSpec, Split, SparsityPlan, ThresholdMode, TrainConfig};

fn sbm(seed: u64) -> Graph<f32> {
    generate_sbm(&SyntheticSpec::small_sbm(seed)).unwrap()
}

fn gcn(plan: SparsityPlan) -> ModelSpec {
    ModelSpec::new(Architecture::Gcn, 16, 32, 2, 2, plan).with_seed(3)
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, learning_rate: lr, ..TrainConfig::default() }
}

#[test]
fn multicoat_gcn_separates_sbm() {
    let graph = sbm(0);
    assert!(dense_logistic_baseline(&graph, 200, 0.5).unwrap() >= 0.95);
    let spec = gcn(SparsityPlan::multicoat(0.5, 3, ThresholdMode::Uniform));
    let out = train(&spec, &graph, &cfg(200, 0.01)).unwrap();
    let best = out.best_record();
    assert!(best.acc_test >= 0.95, "test accuracy {}", best.acc_test);
    assert_eq!(evaluate(&out.model, &graph, &spec.plan.sparsities, Split::Test).unwrap(), best.acc_test);
}

#[test]
fn zero_learning_rate_leaves_scores_alone() {
    let graph = sbm(1);
    let spec = gcn(SparsityPlan::single(0.3));
    let initial = Model::<f32>::new(spec.clone()).unwrap();
    let out = train(&spec, &graph, &cfg(20, 0.0)).unwrap();
    assert_eq!(out.model.scores, initial.scores);
    let late: Vec<f64> = out.history.iter().filter(|r| r.epoch >= 10).map(|r| r.acc_test).collect();
    assert!(late.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn weights_are_never_trained() {
    let graph = sbm(2);
    let spec = gcn(SparsityPlan::multicoat(0.4, 2, ThresholdMode::Uniform));
    let out = train(&spec, &graph, &cfg(15, 0.05)).unwrap();
    let fresh = Model::<f32>::new(spec).unwrap();
    for (a, b) in out.model.weights.iter().zip(&fresh.weights) {
        assert_eq!(a.w_rand, b.w_rand);
        assert_eq!(a.init.generate::<f32>(a.w_rand.rows(), a.w_rand.cols()).unwrap(), a.w_rand);
    }
    assert_ne!(out.model.scores, fresh.scores);
}

#[test]
fn training_is_bit_reproducible() {
    let graph = sbm(3);
    let spec = gcn(SparsityPlan::multicoat(0.5, 3, ThresholdMode::AdaptiveLinear)).with_batch_norm(true);
    let a = train(&spec, &graph, &cfg(12, 0.01)).unwrap();
    let b = train(&spec, &graph, &cfg(12, 0.01)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert!(a.resolution.is_some());
}

#[test]
fn live_mask_sparsity_follows_the_schedule() {
    let graph = sbm(4);
    let target = vec![0.5, 0.6, 0.7];
    let mut model = Model::<f32>::new(gcn(SparsityPlan::with_sparsities(target.clone()))).unwrap();
    let total = 10;
    for t in 1..=total {
        let live = decay_schedule(&target, t, total);
        let pass = model.forward(&graph, &live, Mode::Train).unwrap();
        for (mask, score) in pass.masks.iter().zip(&model.scores) {
            for (n, k) in live.iter().enumerate() {
                let pruned = (k * score.len() as f64 + 1e-9).floor() as usize;
                assert_eq!(mask.coat_popcount(n), score.len() - pruned);
            }
        }
    }
}

#[test]
fn fully_pruned_layer_still_gets_score_gradients() {
    let graph = sbm(5);
    let model = Model::<f32>::new(gcn(SparsityPlan::single(0.5))).unwrap();
    let masks = model.masks(&[0.5]).unwrap();
    let mut effective = model.effective_weights(&masks).unwrap();
    effective[1].data_mut().iter_mut().for_each(|w| *w = 0.0);
    let (logits, cache) =
        forward(&model.spec, model.layout(), &graph, &effective, &model.norms, Mode::Train).unwrap();
    let (_, dlogits) = cross_entropy_loss(&logits, &graph.labels, &graph.splits.train).unwrap();
    let pass = ForwardPass { logits, masks, effective, cache };
    let grads = model.backward_effective(&graph, &pass, &dlogits).unwrap();
    let sg = backward_scores(&model, &grads, StraightThrough::Summed).unwrap();
    let nonzero = sg[1].data().iter().filter(|&&g| g != 0.0).count();
    assert!(nonzero > sg[1].len() / 2, "{nonzero} of {}", sg[1].len());
    let per_coat = backward_scores(&model, &grads, StraightThrough::PerCoat).unwrap();
    assert_eq!(per_coat[1], sg[1]);
}

#[test]
fn single_layer_score_gradient_is_hand_derived() {
    // One GCN layer, loss = Σ logits over all nodes: ∂ℒ/∂W_eff = (Â·X)ᵀ·1,
    // so ∂ℒ/∂s = ((Â·X)ᵀ·1) ⊙ w_rand for positive scores.
    let graph: Graph<f64> = generate_sbm(&SyntheticSpec { num_nodes: 12, ..SyntheticSpec::small_sbm(6) }).unwrap();
    let mut model = Model::<f64>::new(ModelSpec::new(Architecture::Gcn, 16, 1, 1, 2, SparsityPlan::single(0.0))).unwrap();
    model.scores[0].data_mut().iter_mut().for_each(|s| *s = s.abs());
    let pass = model.forward(&graph, &[0.0], Mode::Train).unwrap();
    let ones = DenseMatrix::filled(12, 2, 1.0);
    let grads = model.backward_effective(&graph, &pass, &ones).unwrap();
    let sg = backward_scores(&model, &grads, StraightThrough::Summed).unwrap();
    let agg = spmm(&graph.adjacency, &graph.features).unwrap();
    for r in 0..16 {
        let col_sum: f64 = (0..12).map(|i| agg.get(i, r)).sum();
        for c in 0..2 {
            let expected = col_sum * model.weights[0].w_rand.get(r, c);
            assert!((sg[0].get(r, c) - expected).abs() < 1e-12);
        }
    }
    // A negative score flips the sign: raising |s| is the descent direction.
    let mut flipped = model.clone();
    let s00 = flipped.scores[0].get(0, 0);
    flipped.scores[0].set(0, 0, -s00);
    let sf = backward_scores(&flipped, &grads, StraightThrough::Summed).unwrap();
    assert_eq!(sf[0].get(0, 0), -sg[0].get(0, 0));
}

#[test]
fn non_finite_features_report_divergence() {
    let mut graph = sbm(2);
    graph.features.data_mut()[0] = f32::INFINITY;
    let spec = gcn(SparsityPlan::single(0.5));
    match train(&spec, &graph, &cfg(5, 0.01)) {
        Err(sltgnn::Error::Diverged { epoch, loss }) => assert!(epoch == 1 && !loss.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
    }
}
