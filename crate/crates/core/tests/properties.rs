use proptest::prelude::*;
use sltgnn::compressor::{decode_nested, encode_nested};
use sltgnn::matrix::{dense_spmm, matmul_transpose_a};
use sltgnn::supermask::{multicoat_masks, multicoat_masks_global, pruned_count, single_mask, single_mask_global};
use sltgnn::{spmm, CsrMatrix, DenseMatrix, Graph, Splits};

fn scores() -> impl Strategy<Value = DenseMatrix<f64>> {
    (1usize..=32, 1usize..=32).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| DenseMatrix::from_vec(r, c, v).unwrap())
    })
}

fn sparsities() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, 1..=5).prop_map(|mut k| {
        k.sort_by(f64::total_cmp);
        k
    })
}

fn naive(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

proptest! {
    #[test]
    fn coat_cardinality_and_nesting(s in scores(), k in sparsities()) {
        let counts = multicoat_masks(&s, &k).unwrap();
        for (n, &kn) in k.iter().enumerate() {
            prop_assert_eq!(counts.coat_popcount(n), s.len() - pruned_count(kn, s.len()));
            if n > 0 {
                prop_assert!(counts.coat(n).is_subset_of(&counts.coat(n - 1)));
            }
        }
        let (decoded, _) = decode_nested(s.rows(), s.cols(), k.len(), &encode_nested(&counts)).unwrap();
        prop_assert_eq!(decoded, counts);
    }

    #[test]
    fn selection_and_ranking_routes_agree(s in scores(), k in 0.0f64..1.0) {
        let single = single_mask(&s, k).unwrap();
        let coat = multicoat_masks(&s, &[k]).unwrap().coat(0);
        prop_assert_eq!(single, coat);
    }

    #[test]
    fn global_masks_count_over_all_sets(a in scores(), b in scores(), k in sparsities()) {
        let total = a.len() + b.len();
        let masks = multicoat_masks_global(&[&a, &b], &k).unwrap();
        for (n, &kn) in k.iter().enumerate() {
            let kept = masks[0].coat_popcount(n) + masks[1].coat_popcount(n);
            prop_assert_eq!(kept, total - pruned_count(kn, total));
        }
        let single = single_mask_global(&[&a, &b], k[0]).unwrap();
        prop_assert_eq!(&single[0], &masks[0].coat(0));
        prop_assert_eq!(&single[1], &masks[1].coat(0));
    }

    #[test]
    fn sparse_products_match_dense(
        a in proptest::collection::vec(prop_oneof![Just(0.0f64), -2.0f64..2.0], 6 * 5),
        x in proptest::collection::vec(-1.0f64..1.0, 5 * 4),
    ) {
        let a = DenseMatrix::from_vec(6, 5, a).unwrap();
        let x = DenseMatrix::from_vec(5, 4, x).unwrap();
        let csr = CsrMatrix::from_dense(&a);
        prop_assert!(spmm(&csr, &x).unwrap().max_abs_diff(&naive(&a, &x)).unwrap() < 1e-12);
        let h = naive(&x.transpose(), &a.transpose());
        let csr_t = CsrMatrix::from_dense(&a.transpose());
        prop_assert!(dense_spmm(&x.transpose(), &csr_t).unwrap().max_abs_diff(&h).unwrap() < 1e-12);
        prop_assert!(matmul_transpose_a(&a, &a).unwrap().max_abs_diff(&naive(&a.transpose(), &a)).unwrap() < 1e-12);
    }

    #[test]
    fn normalized_adjacency_is_symmetric_and_bounded(
        edges in proptest::collection::vec((0usize..15, 0usize..15), 0..40),
    ) {
        let g = Graph::new(&edges, DenseMatrix::<f64>::zeros(15, 1), vec![0; 15], Splits::default()).unwrap();
        prop_assert!(g.adjacency.is_symmetric());
        prop_assert!(g.sum_adjacency.is_symmetric());
        prop_assert!(g.adjacency.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        // The largest eigenvalue of D^-1/2 (A+I) D^-1/2 is 1; the all-ones
        // vector scaled by sqrt(degree) is its eigenvector.
        let deg: Vec<f64> = g.sum_adjacency.row_sums();
        let v = DenseMatrix::from_fn(15, 1, |r, _| deg[r].sqrt());
        let av = spmm(&g.adjacency, &v).unwrap();
        prop_assert!(av.max_abs_diff(&v).unwrap() < 1e-12);
    }
}
