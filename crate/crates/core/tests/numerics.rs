use mone_core::numerics::{
    activation, finite_diff_grad, init_weights, matmul, softmax_in_place, topk_indices, Activation, Rng, Tensor,
};
use proptest::prelude::*;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    init_weights(&[rows, cols], 1.0, &mut Rng::new(seed))
}

proptest! {
    #[test]
    fn identity_is_exact(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, seed);
        prop_assert_eq!(matmul(&a, &Tensor::eye(cols)).unwrap(), a);
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-30.0f64..30.0, 1..40)) {
        let mut a = v.clone();
        softmax_in_place(&mut a).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut b: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        softmax_in_place(&mut b).unwrap();
        prop_assert!((b.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn full_topk_is_every_index(v in prop::collection::vec(-5.0f64..5.0, 1..30), by_abs in any::<bool>()) {
        let all: Vec<usize> = (0..v.len()).collect();
        prop_assert_eq!(topk_indices(&v, v.len(), by_abs).unwrap(), all);
    }

    #[test]
    fn topk_matches_sort(v in prop::collection::vec(-3i32..3, 1..50), k in 1usize..50, by_abs in any::<bool>()) {
        // Small integers force plenty of ties.
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let k = k.min(v.len());
        let key = |i: usize| if by_abs { v[i].abs() } else { v[i] };
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).unwrap().then(a.cmp(&b)));
        let mut want = order[..k].to_vec();
        want.sort_unstable();
        prop_assert_eq!(topk_indices(&v, k, by_abs).unwrap(), want);
    }

    #[test]
    fn elementwise_gradients_match_differences(v in prop::collection::vec(-4.0f64..4.0, 1..8), sig in any::<bool>()) {
        let kind = if sig { Activation::Sigmoid } else { Activation::Silu };
        let x = Tensor::from_vec(v);
        let numeric = finite_diff_grad(|t| activation(t, kind).unwrap().data().iter().sum(), &x, 1e-5).unwrap();
        for (i, &z) in x.data().iter().enumerate() {
            let s = 1.0 / (1.0 + (-z).exp());
            let exact = if sig { s * (1.0 - s) } else { s * (1.0 + z * (1.0 - s)) };
            prop_assert!((numeric.data()[i] - exact).abs() <= 1e-4 * exact.abs().max(1e-3));
        }
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let a = random_matrix(7, 5, 1);
    let b = random_matrix(5, 3, 2);
    let c = matmul(&a, &b).unwrap();
    for i in 0..7 {
        for j in 0..3 {
            let s: f64 = (0..5).map(|k| a.at(i, k) * b.at(k, j)).sum();
            assert!((c.at(i, j) - s).abs() < 1e-12);
        }
    }
}

#[test]
fn init_is_seeded_and_centred() {
    let a: Tensor<f64> = init_weights(&[100_000], 1.0, &mut Rng::new(5));
    let b: Tensor<f64> = init_weights(&[100_000], 1.0, &mut Rng::new(5));
    let c: Tensor<f64> = init_weights(&[100_000], 1.0, &mut Rng::new(6));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mean = a.data().iter().sum::<f64>() / 1e5;
    // Three standard errors of the mean.
    assert!(mean.abs() < 3.0 / 1e5f64.sqrt(), "mean {mean}");
}

#[test]
fn quadratic_and_constant_gradients() {
    let x = Tensor::from_vec(vec![1.0, 2.0]);
    let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
    assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
    let z = finite_diff_grad(|_| 3.5, &x, 1e-5).unwrap();
    assert!(z.data().iter().all(|v| *v == 0.0));
}
