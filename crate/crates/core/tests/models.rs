use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sltgnn::model::{gcn_forward, gin_forward, resgcn_block_forward, BatchNorm, Mode, WeightSet};
use sltgnn::{Architecture, DenseMatrix, FoldSpec, Graph, Model, ModelSpec, SparsityPlan, Splits};

fn random_graph(seed: u64, n: usize, f: usize) -> Graph<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.25 {
                edges.push((u, v));
            }
        }
    }
    let features = DenseMatrix::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|i| i % 3).collect();
    Graph::new(&edges, features, labels, Splits { train: (0..n).collect(), val: vec![], test: vec![] }).unwrap()
}

fn random_matrix(seed: u64, r: usize, c: usize) -> DenseMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Plain triple-loop product, independent of the library kernels.
fn naive(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

fn relu(m: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn assert_close(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b).unwrap();
    assert!(d <= tol, "max abs diff {d}");
}

#[test]
fn gcn_matches_dense_oracle() {
    let g = random_graph(1, 12, 5);
    let a = g.adjacency.to_dense();
    let ws = [random_matrix(2, 5, 7), random_matrix(3, 7, 7), random_matrix(4, 7, 3)];
    let (out, _) = gcn_forward(&g, &ws, &[], Mode::Eval).unwrap();
    let mut h = g.features.clone();
    for (l, w) in ws.iter().enumerate() {
        h = naive(&naive(&a, &h), w);
        if l < 2 {
            h = relu(&h);
        }
    }
    assert_close(&out, &h, 1e-12);
}

#[test]
fn gin_matches_dense_oracle() {
    let g = random_graph(5, 10, 4);
    let a = g.sum_adjacency.to_dense();
    let ws = [random_matrix(6, 4, 6), random_matrix(7, 6, 6), random_matrix(8, 6, 2), random_matrix(9, 2, 2)];
    let (out, _) = gin_forward(&g, &ws, &[], Mode::Eval).unwrap();
    let b0 = relu(&naive(&relu(&naive(&naive(&a, &g.features), &ws[0])), &ws[1]));
    let b1 = naive(&relu(&naive(&naive(&a, &b0), &ws[2])), &ws[3]);
    assert_close(&out, &b1, 1e-12);
}

#[test]
fn residual_block_matches_dense_oracle() {
    let g = random_graph(10, 9, 4);
    let h = random_matrix(11, 9, 4);
    let w = random_matrix(12, 4, 4);
    let out = resgcn_block_forward(&h, &g, &w, None, Mode::Eval).unwrap();
    let expected = naive(&naive(&g.adjacency.to_dense(), &relu(&h)), &w).add(&h).unwrap();
    assert_close(&out, &expected, 1e-12);
    let mut bn = BatchNorm::new(4);
    bn.running_mean = vec![0.1, -0.2, 0.3, 0.0];
    bn.running_var = vec![1.5, 0.5, 2.0, 1.0];
    let out = resgcn_block_forward(&h, &g, &w, Some(&bn), Mode::Eval).unwrap();
    let normed = DenseMatrix::from_fn(9, 4, |r, c| (h.get(r, c) - bn.running_mean[c]) / (bn.running_var[c] + bn.eps).sqrt());
    let expected = naive(&naive(&g.adjacency.to_dense(), &relu(&normed)), &w).add(&h).unwrap();
    assert_close(&out, &expected, 1e-12);
    assert!(resgcn_block_forward(&h, &g, &random_matrix(1, 4, 3), None, Mode::Eval).is_err());
}

fn resgcn(fold: Option<FoldSpec>, bn: bool) -> ModelSpec {
    let spec = ModelSpec::new(Architecture::ResGcn, 6, 16, 4, 3, SparsityPlan::with_sparsities(vec![0.3, 0.5, 0.7]))
        .with_batch_norm(bn)
        .with_seed(21);
    match fold {
        Some(f) => spec.with_fold(f),
        None => spec,
    }
}

#[test]
fn fold_with_one_iteration_per_stage_is_the_unfolded_model() {
    let g = random_graph(20, 14, 6);
    let folded = Model::<f64>::new(resgcn(Some(FoldSpec::msf(4, 4, true)), true)).unwrap();
    let plain = Model::<f64>::new(resgcn(None, true)).unwrap();
    assert_eq!(folded.layout(), plain.layout());
    let k = [0.3, 0.5, 0.7];
    assert_eq!(folded.logits(&g, &k).unwrap(), plain.logits(&g, &k).unwrap());
}

#[test]
fn folded_model_equals_unfolded_model_with_replicated_weights() {
    let g = random_graph(22, 14, 6);
    for bn in [false, true] {
        let mut folded = Model::<f64>::new(resgcn(Some(FoldSpec::msf(4, 2, true)), bn)).unwrap();
        for (i, n) in folded.norms.iter_mut().enumerate() {
            n.running_mean.iter_mut().for_each(|m| *m = 0.1 * i as f64);
            n.gamma.iter_mut().enumerate().for_each(|(c, v)| *v = 1.0 + 0.01 * c as f64);
        }
        let map = folded.spec.effective_fold().weight_map();
        assert_eq!(map, vec![0, 0, 1, 1]);
        let mut weights: Vec<WeightSet<f64>> = vec![folded.weights[0].clone()];
        weights.extend(map.iter().map(|&j| folded.weights[1 + j].clone()));
        weights.push(folded.weights[3].clone());
        let norms = if bn {
            let mut v: Vec<_> = map.iter().map(|&j| folded.norms[j].clone()).collect();
            v.push(folded.norms[2].clone());
            v
        } else {
            vec![]
        };
        let unfolded = Model::from_parts(resgcn(None, bn), weights, folded.scores.clone(), norms).unwrap();
        let k = [0.3, 0.5, 0.7];
        assert_eq!(folded.logits(&g, &k).unwrap(), unfolded.logits(&g, &k).unwrap());
    }
}

#[test]
fn shared_and_unshared_score_set_counts() {
    for (fold, weights, scores) in [
        (FoldSpec::ssf(4, true), 1, 4),
        (FoldSpec::ssf(4, false), 1, 1),
        (FoldSpec::msf(4, 2, true), 2, 4),
        (FoldSpec::msf(4, 2, false), 2, 2),
    ] {
        let m = Model::<f32>::new(resgcn(Some(fold), false)).unwrap();
        // encoder and head are never folded
        assert_eq!(m.weights.len(), weights + 2);
        assert_eq!(m.scores.len(), scores + 2);
    }
}

#[test]
fn logits_are_permutation_equivariant() {
    let g = random_graph(30, 11, 5);
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut perm: Vec<usize> = (0..11).collect();
    for i in (1..11).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let pg = g.permuted(&perm).unwrap();
    let specs = [
        ModelSpec::new(Architecture::Gcn, 5, 8, 3, 3, SparsityPlan::single(0.4)).with_batch_norm(true),
        ModelSpec::new(Architecture::Gin, 5, 8, 2, 3, SparsityPlan::with_sparsities(vec![0.2, 0.6])),
        resgcn(Some(FoldSpec::msf(4, 2, false)), true),
    ];
    for spec in specs {
        let spec = ModelSpec { in_dim: 5, ..spec };
        let mut model = Model::<f64>::new(spec).unwrap();
        let k = model.spec.plan.sparsities.clone();
        let a = model.logits(&g, &k).unwrap();
        let b = model.logits(&pg, &k).unwrap();
        let moved = DenseMatrix::from_fn(11, a.cols(), |r, c| a.get(perm.iter().position(|&p| p == r).unwrap(), c));
        assert_close(&b, &moved, 1e-10);
        let ta = model.forward(&g, &k, Mode::Train).unwrap().logits;
        let tb = model.forward(&pg, &k, Mode::Train).unwrap().logits;
        let moved = DenseMatrix::from_fn(11, ta.cols(), |r, c| ta.get(perm.iter().position(|&p| p == r).unwrap(), c));
        assert_close(&tb, &moved, 1e-10);
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let g = random_graph(40, 6, 4);
    let model = Model::<f64>::new(ModelSpec::new(Architecture::Gcn, 5, 8, 2, 3, SparsityPlan::single(0.1))).unwrap();
    assert!(model.logits(&g, &[0.1]).is_err());
    assert!(gcn_forward(&g, &[random_matrix(1, 3, 2)], &[], Mode::Eval).is_err());
}
