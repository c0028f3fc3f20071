mod common;

use proptest::prelude::*;

use rpattn::kernels::{depthwise_conv2d, layer_norm, matmul, softmax_backward_rows, softmax_lastdim, softmax_row};
use rpattn::{finite_diff_grad, Tensor};

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_matches_loops(m in 1usize..8, k in 1usize..8, n in 1usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = randn(&mut r, &[m, k]);
        let b = randn(&mut r, &[k, n]);
        let got = matmul(&a, &b).unwrap();
        prop_assert!(max_abs(got.data(), &naive_matmul(a.data(), b.data(), m, k, n)) <= 1e-12);
    }

    #[test]
    fn broadcast_matmul_matches_loops(bt in 1usize..4, m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = randn(&mut r, &[bt, m, k]);
        let w = randn(&mut r, &[k, n]);
        let got = matmul(&a, &w).unwrap();
        prop_assert_eq!(got.shape(), &[bt, m, n]);
        let want = naive_matmul(a.data(), w.data(), bt * m, k, n);
        prop_assert!(max_abs(got.data(), &want) <= 1e-12);
    }

    #[test]
    fn softmax_and_layer_norm_match_loops(rows in 1usize..5, w in 1usize..10, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut x = randn(&mut r, &[rows, w]);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let s = softmax_lastdim(&x);
        let want: Vec<f64> = x.data().chunks(w).flat_map(naive_softmax).collect();
        prop_assert!(max_abs(s.data(), &want) <= 1e-12);
        for row in s.data().chunks(w) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let gamma = randn(&mut r, &[w]);
        let beta = randn(&mut r, &[w]);
        let ln = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        let want: Vec<f64> = x.data().chunks(w).flat_map(|row| naive_layer_norm(row, gamma.data(), beta.data(), 1e-5)).collect();
        prop_assert!(max_abs(ln.data(), &want) <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn dwc_matches_loops(b in 1usize..3, h in 1usize..7, w in 1usize..7, c in 1usize..4, ki in 0usize..3, seed in any::<u64>()) {
        let k = [1, 3, 5][ki];
        let mut r = rng(seed);
        let x = randn(&mut r, &[b, h, w, c]);
        let kernel = randn(&mut r, &[k, k, c]);
        let bias = randn(&mut r, &[c]);
        let got = depthwise_conv2d(&x, &kernel, &bias).unwrap();
        prop_assert!(max_abs(got.data(), &naive_dwc(x.data(), kernel.data(), bias.data(), [b, h, w, c], k)) <= 1e-12);
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut r = rng(17);
    for _ in 0..10 {
        let z = randn(&mut r, &[3]);
        let w = randn(&mut r, &[3]);
        let loss = |t: &Tensor<f64>| naive_softmax(t.data()).iter().zip(w.data()).map(|(p, w)| p * w).sum::<f64>();
        let numeric = finite_diff_grad(loss, &z, 1e-5).unwrap();
        // Jᵀw = p ⊙ (w − p·w)
        let p = naive_softmax(z.data());
        let pw: f64 = p.iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let analytic: Vec<f64> = p.iter().zip(w.data()).map(|(a, b)| a * (b - pw)).collect();
        assert!(max_abs(numeric.data(), &analytic) < 1e-7);
        let mut probs = z.data().to_vec();
        softmax_row(&mut probs);
        let kernel = softmax_backward_rows(&probs, w.data(), 3);
        assert!(max_abs(&kernel, &analytic) < 1e-14);
    }
}

#[test]
fn shape_errors_name_both_shapes() {
    let a = Tensor::<f64>::zeros(&[2, 3]);
    let b = Tensor::<f64>::zeros(&[4, 5]);
    let msg = matmul(&a, &b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}
