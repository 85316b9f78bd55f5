use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

const LN_EPS: f64 = 1e-10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let y = g.softmax(x);
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_matches_hand_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let y = g.softmax(x);
    for (got, want) in g.value(y).data().iter().zip([0.09003, 0.24473, 0.66524]) {
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
}

#[test]
fn identity_matmul_is_noop() {
    let a = Tensor::randn(&[3, 3], 1.0, &mut rng(1));
    let mut g = Graph::new();
    let i = g.constant(Tensor::eye(3));
    let av = g.constant(a.clone());
    let y = g.matmul(i, av).unwrap();
    assert_eq!(g.value(y), &a);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 5]));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 5]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::randn(&[2, 3, 4], 1.0, &mut rng(2)));
    let s = g.sum_all(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_of_square_sum() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::from_vec(vec![1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

fn mlp_loss(g: &mut Graph<'_>, p: &[Var]) -> crate::Result<Var> {
    // p = [x, w1, b1, w2, b2]
    let h = g.matmul(p[0], p[1])?;
    let h = g.add(h, p[2])?;
    let h = g.tanh(h);
    let o = g.matmul(h, p[3])?;
    let o = g.add(o, p[4])?;
    let lp = g.log_softmax(o);
    Ok(g.mean_all(lp))
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut r = rng(3);
    let params = vec![
        Tensor::randn(&[4, 5], 1.0, &mut r),
        Tensor::randn(&[5, 6], 0.5, &mut r),
        Tensor::randn(&[6], 0.1, &mut r),
        Tensor::randn(&[6, 3], 0.5, &mut r),
        Tensor::randn(&[3], 0.1, &mut r),
    ];
    let report = grad_check(mlp_loss, &params, 1e-5, 1e-4).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn grad_check_sum_of_squares_is_tight() {
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng(4));
    let report = grad_check(
        |g, p| {
            let sq = g.mul(p[0], p[0])?;
            Ok(g.sum_all(sq))
        },
        &[x],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_err() < 1e-8, "{report:?}");
}

#[test]
fn grad_check_constant_function_has_zero_grads() {
    let x = Tensor::randn(&[5], 1.0, &mut rng(5));
    let report = grad_check(
        |g, _p| Ok(g.constant(Tensor::scalar(3.0))),
        &[x],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert_eq!(report.params[0].max_abs_err, 0.0);
    assert!(report.passed());
}

#[test]
fn masked_entries_vanish_after_softmax() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::randn(&[2, 4], 1.0, &mut rng(6)));
    let mask = [false, true, false, true, true, true, false, true];
    let f = g.masked_fill(x, &mask, MASK_FILL).unwrap();
    let y = g.softmax(f);
    let v = g.value(y);
    for (p, &m) in v.data().iter().zip(&mask) {
        if m {
            assert_eq!(*p, 0.0);
        }
    }
    for r in 0..2 {
        assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn permute_round_trips() {
    let t = Tensor::randn(&[2, 3, 4], 1.0, &mut rng(7));
    let mut g = Graph::new();
    let x = g.constant(t.clone());
    let y = g.permute(x, &[2, 0, 1]).unwrap();
    assert_eq!(g.shape(y), &[4, 2, 3]);
    let z = g.permute(y, &[1, 2, 0]).unwrap();
    assert_eq!(g.value(z), &t);
    assert!(g.permute(x, &[0, 0, 1]).is_err());
}

/// Central-difference check of a single primitive applied to random
/// inputs, with a fixed random projection to form a scalar.
fn check_primitive(
    inputs: Vec<Tensor>,
    seed: u64,
    op: impl Fn(&mut Graph<'_>, &[Var]) -> crate::Result<Var>,
) {
    let report = grad_check(
        |g, p| {
            let y = op(g, p)?;
            let w = Tensor::randn(g.shape(y), 1.0, &mut rng(seed));
            let w = g.constant(w);
            let prod = g.mul(y, w)?;
            Ok(g.sum_all(prod))
        },
        &inputs,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..4, 1usize..5, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fd_matmul_shared((b, m, k) in dims(), n in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = Tensor::randn(&[b, m, k], 1.0, &mut r);
        let w = Tensor::randn(&[k, n], 1.0, &mut r);
        check_primitive(vec![a, w], seed, |g, p| g.matmul(p[0], p[1]));
    }

    #[test]
    fn fd_matmul_batched((b, m, k) in dims(), n in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = Tensor::randn(&[b, 2, m, k], 1.0, &mut r);
        let w = Tensor::randn(&[b, 2, k, n], 1.0, &mut r);
        check_primitive(vec![a, w], seed, |g, p| g.matmul(p[0], p[1]));
    }

    #[test]
    fn fd_permute_reshape((b, m, k) in dims(), seed in 0u64..1000) {
        let x = Tensor::randn(&[b, m, k], 1.0, &mut rng(seed));
        check_primitive(vec![x], seed, |g, p| {
            let t = g.permute(p[0], &[1, 2, 0])?;
            g.reshape(t, &[m * k, b])
        });
    }

    #[test]
    fn fd_binary_broadcasts((b, m, k) in dims(), seed in 0u64..1000, which in 0usize..4) {
        let mut r = rng(seed);
        let a = Tensor::randn(&[b, m, k], 1.0, &mut r);
        let same = Tensor::randn(&[b, m, k], 1.0, &mut r).map(|v| v.abs() + 0.5);
        let suffix = Tensor::randn(&[m, k], 1.0, &mut r).map(|v| v.abs() + 0.5);
        let scalar = Tensor::scalar(1.7);
        for rhs in [same, suffix, scalar] {
            check_primitive(vec![a.clone(), rhs], seed, |g, p| match which {
                0 => g.add(p[0], p[1]),
                1 => g.sub(p[0], p[1]),
                2 => g.mul(p[0], p[1]),
                _ => g.div(p[0], p[1]),
            });
        }
    }

    #[test]
    fn fd_unary((b, m, k) in dims(), seed in 0u64..1000) {
        let x = Tensor::randn(&[b, m, k], 1.0, &mut rng(seed));
        let pos = x.map(|v| v.abs() + 0.3);
        // keep relu inputs away from the kink
        let off = x.map(|v| if v.abs() < 0.05 { 0.5 } else { v });
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.exp(p[0])));
        check_primitive(vec![pos], seed, |g, p| Ok(g.log(p[0])));
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.tanh(p[0])));
        check_primitive(vec![off], seed, |g, p| Ok(g.relu(p[0])));
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.scale(p[0], -2.5)));
        check_primitive(vec![x], seed, |g, p| Ok(g.add_scalar(p[0], 4.0)));
    }

    #[test]
    fn fd_normalizers((b, m, k) in dims(), seed in 0u64..1000) {
        let x = Tensor::randn(&[b, m, k + 1], 1.0, &mut rng(seed));
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.softmax(p[0])));
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.log_softmax(p[0])));
        // spread rows so no vector is near-constant (the normalizer's
        // curvature blows up as the variance goes to zero)
        let spread = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().enumerate().map(|(i, v)| 0.3 * v + (i % (k + 1)) as f64).collect(),
        )
        .unwrap();
        check_primitive(vec![spread], seed, |g, p| Ok(g.layer_norm(p[0], LN_EPS)));
    }

    #[test]
    fn fd_reductions((b, m, k) in dims(), seed in 0u64..1000) {
        let x = Tensor::randn(&[b, m, k], 1.0, &mut rng(seed));
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.sum_all(p[0])));
        check_primitive(vec![x.clone()], seed, |g, p| Ok(g.mean_all(p[0])));
        check_primitive(vec![x], seed, |g, p| Ok(g.sum_last(p[0])));
    }

    #[test]
    fn fd_gather_and_fill(v in 2usize..6, d in 1usize..5, ids in proptest::collection::vec(0usize..6, 1..7), seed in 0u64..1000) {
        let ids: Vec<usize> = ids.into_iter().map(|i| i % v).collect();
        let table = Tensor::randn(&[v, d], 1.0, &mut rng(seed));
        check_primitive(vec![table.clone()], seed, |g, p| g.gather(p[0], &ids));
        let mask: Vec<bool> = (0..v * d).map(|i| (i * 7 + seed as usize) % 3 == 0).collect();
        check_primitive(vec![table], seed, |g, p| g.masked_fill(p[0], &mask, -3.0));
    }

    #[test]
    fn softmax_rows_are_distributions((b, m, k) in dims(), seed in 0u64..1000, scale in 0.1f64..50.0) {
        let x = Tensor::randn(&[b, m, k], scale, &mut rng(seed));
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = g.softmax(xv);
        let y = g.value(y);
        for r in 0..b * m {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes((b, m) in (1usize..4, 1usize..5), k in 2usize..40, seed in 0u64..1000, scale in 0.5f64..20.0, shift in -10.0f64..10.0) {
        let x = Tensor::randn(&[b, m, k], scale, &mut rng(seed)).map(|v| v + shift);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = g.layer_norm(xv, LN_EPS);
        let y = g.value(y);
        for r in 0..b * m {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / k as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!((var - 1.0).abs() <= 1e-8);
        }
    }
}
