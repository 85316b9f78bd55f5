use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Pair;
use crate::model::{encode, Flavor, ModelConfig, LOG_SIGMA_SQ};
use crate::train::model_grad_check;

fn tiny_config(shared: bool) -> ModelConfig {
    ModelConfig {
        num_heads: 2,
        model_dim: 16,
        hidden_dim: 32,
        max_len: 24,
        shared_layer_positions: shared,
        ..ModelConfig::desk(12, Flavor::Nar)
    }
}

fn student(seed: u64) -> ModelParams {
    ModelParams::init(tiny_config(true), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn single_position_copies_the_encoder_state() {
    let w = soft_copy_weights(1, 1, 1.0, true).unwrap();
    assert_eq!(w.data(), &[1.0]);
    let enc = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
    assert_eq!(soft_copy(&enc, 1, 0.3, true).unwrap(), enc);
}

#[test]
fn two_by_two_hand_values() {
    let w = soft_copy_weights(2, 2, 1.0, true).unwrap();
    assert!((w.row(0)[0] - 0.6225).abs() < 1e-4);
    assert!((w.row(0)[1] - 0.3775).abs() < 1e-4);
    let e = (-0.5f64).exp();
    assert!((w.row(0)[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
}

#[test]
fn small_variance_tends_to_identity() {
    let w = soft_copy_weights(3, 3, 1e-3, true).unwrap();
    let eye = Tensor::eye(3);
    assert!(w.max_abs_diff(&eye) < 1e-12);
}

#[test]
fn rows_are_positive_distributions_with_monotone_centers() {
    for (src, tgt) in [(5, 9), (9, 5), (7, 7), (1, 4), (12, 3)] {
        for sigma_sq in [0.3, 1.0, 4.0] {
            let w = soft_copy_weights(src, tgt, sigma_sq, true).unwrap();
            let mut prev = 0;
            for t in 0..tgt {
                let row = w.row(t);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&x| x > 0.0));
                let center = argmax(row);
                assert!(center >= prev);
                prev = center;
            }
        }
    }
}

#[test]
fn unnormalized_kernel_is_the_gaussian_density() {
    let w = soft_copy_weights(3, 3, 2.0, false).unwrap();
    let dens = |x: f64| (-x * x / 4.0).exp() / (2.0 * std::f64::consts::PI * 2.0).sqrt();
    assert!((w.row(0)[2] - dens(2.0)).abs() < 1e-15);
    assert!((w.row(1)[1] - dens(0.0)).abs() < 1e-15);
}

#[test]
fn invalid_variance_is_rejected() {
    assert!(soft_copy_weights(2, 2, 0.0, true).is_err());
    assert!(soft_copy(&Tensor::zeros(&[2, 4]), 3, -1.0, true).is_err());
}

#[test]
fn variance_gradient_matches_finite_differences() {
    let enc = Tensor::new(vec![1, 4, 2], vec![0.3, -1.0, 0.8, 0.2, -0.4, 1.1, 0.9, -0.7]).unwrap();
    for normalize in [true, false] {
        let f = |g: &mut Graph<'_>, v: &[Var]| -> Result<Var> {
            let out = soft_copy_graph(g, v[0], v[1], &[4], &[3], normalize)?;
            let sq = g.mul(out, out)?;
            Ok(g.sum_all(sq))
        };
        let rep = crate::tensor::grad_check(f, &[enc.clone(), Tensor::from_vec(vec![0.2])], 1e-6, 1e-6).unwrap();
        assert!(rep.passed(), "normalize={normalize}: {}", rep.max_rel_err());
    }
}

#[test]
fn distributions_have_requested_shape_and_are_deterministic() {
    let p = student(1);
    let d = nar_forward(&p, &[4, 5, 6, 7], 6).unwrap();
    assert_eq!(d.shape(), &[6, 12]);
    for t in 0..6 {
        assert!((d.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(d, nar_forward(&p, &[4, 5, 6, 7], 6).unwrap());
}

#[test]
fn overlong_or_empty_targets_are_rejected() {
    let p = student(1);
    assert!(matches!(nar_forward(&p, &[4, 5], 25), Err(Error::TooLong { .. })));
    assert!(nar_forward(&p, &[4, 5], 0).is_err());
    let teacher = ModelParams::init(
        ModelConfig {
            flavor: Flavor::Ar,
            ..tiny_config(true)
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(nar_forward(&teacher, &[4], 2).is_err());
}

#[test]
fn every_target_position_depends_on_every_source_position() {
    let p = student(2);
    let enc = encode(&p, &[4, 5, 6, 7, 8]).unwrap();
    let base = nar_forward_from_encoder(&p, &enc, 4).unwrap();
    for i in 0..5 {
        let mut bumped = enc.clone();
        for k in 0..16 {
            bumped.data_mut()[i * 16 + k] += 0.5;
        }
        let out = nar_forward_from_encoder(&p, &bumped, 4).unwrap();
        for t in 0..4 {
            let diff = base.row(t).iter().zip(out.row(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff > 1e-9, "target {t} ignores source {i}");
        }
    }
}

#[test]
fn decoder_attends_to_later_positions() {
    let p = student(3);
    let enc = encode(&p, &[4, 5, 6]).unwrap();
    let x = soft_copy(&enc, 4, 1.0, true).unwrap();
    let base = nar_forward_from_inputs(&p, &enc, &x).unwrap();
    let mut bumped = x.clone();
    for k in 0..16 {
        bumped.data_mut()[3 * 16 + k] += 0.5;
    }
    let out = nar_forward_from_inputs(&p, &enc, &bumped).unwrap();
    let diff = base.row(0).iter().zip(out.row(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-9);
}

#[test]
fn emitted_length_and_scale_invariance() {
    let p = student(4);
    for len in 1..8 {
        assert_eq!(nar_greedy_emit(&p, &[4, 5, 6], len).unwrap().len(), len);
    }
    let d = nar_forward(&p, &[4, 5, 6], 5).unwrap();
    let doubled = d.map(|v| 2.0 * v.ln());
    assert_eq!(argmax_rows(&d), argmax_rows(&doubled));
    assert_eq!(argmax_rows(&d), nar_greedy_emit(&p, &[4, 5, 6], 5).unwrap());
}

#[test]
fn batched_emission_matches_single() {
    let p = student(5);
    let srcs = vec![vec![4, 5], vec![6, 7, 8, 9, 10], vec![11]];
    let lens = vec![3, 5, 2];
    let batch = nar_emit_batch(&p, &srcs, &lens).unwrap();
    for i in 0..3 {
        assert_eq!(batch[i], nar_greedy_emit(&p, &srcs[i], lens[i]).unwrap());
    }
}

#[test]
fn parameter_set_has_no_positional_attention() {
    let p = student(1);
    assert!(p.names().all(|n| !n.contains("pos_attn") && !n.contains("positional_attn")));
    assert!(p.get(LOG_SIGMA_SQ).is_some());
}

#[test]
fn full_student_gradients_match_finite_differences() {
    for shared in [true, false] {
        let mut cfg = tiny_config(shared);
        cfg.num_layers = 1;
        cfg.hidden_dim = 8;
        cfg.model_dim = 8;
        let p = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let pairs = vec![Pair::new(vec![4, 5, 6], vec![7, 8, 9, 10])];
        let rep = model_grad_check(&p, &pairs, 0.1, &[1e-5, 1e-7], 1e-4).unwrap();
        assert!(rep.passed(), "{:?}", rep.worst());
        assert!(rep.checks.iter().any(|c| c.name == LOG_SIGMA_SQ));
    }
}
