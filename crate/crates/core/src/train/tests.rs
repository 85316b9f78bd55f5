use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Pair;
use crate::error::Error;
use crate::model::{encode, Flavor, ModelConfig, ModelParams, EMBED};

fn tiny(flavor: Flavor) -> ModelConfig {
    ModelConfig {
        num_heads: 2,
        model_dim: 16,
        hidden_dim: 32,
        max_len: 32,
        ..ModelConfig::desk(12, flavor)
    }
}

fn init(flavor: Flavor, seed: u64) -> ModelParams {
    ModelParams::init(tiny(flavor), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn toy_pairs(n: usize) -> Vec<Pair> {
    (0..n)
        .map(|i| {
            let src: Vec<usize> = (0..(2 + i % 4)).map(|j| 4 + (i + 3 * j) % 8).collect();
            let tgt = src.iter().rev().copied().collect();
            Pair::new(src, tgt)
        })
        .collect()
}

#[test]
fn single_pair_is_memorized_with_monotone_loss() {
    for flavor in [Flavor::Ar, Flavor::Nar] {
        let pair = Pair::new(vec![4, 9, 6, 11], vec![7, 5, 10, 8]);
        let cfg = TrainConfig {
            warmup_steps: 1,
            peak_lr: 1e-2,
            label_smoothing: 0.0,
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(init(flavor, 1), cfg).unwrap();
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(tr.step(&[&pair]).unwrap().0);
        }
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{flavor:?} loss rose: {} -> {}", w[0], w[1]);
        }
        let last = corpus_loss(tr.params(), std::slice::from_ref(&pair), 0.0).unwrap();
        assert!(last < 0.02 * losses[0], "{flavor:?} final loss {last} from {}", losses[0]);
    }
}

#[test]
fn averaging_identical_snapshots_is_exact() {
    let p = init(Flavor::Ar, 2);
    let avg = ModelParams::average(&[&p, &p, &p, &p, &p]).unwrap();
    assert_eq!(avg, p);
}

#[test]
fn averaging_is_the_arithmetic_mean() {
    let ps: Vec<ModelParams> = (0..5).map(|s| init(Flavor::Nar, s)).collect();
    let refs: Vec<&ModelParams> = ps.iter().collect();
    let avg = ModelParams::average(&refs).unwrap();
    for (name, t) in avg.iter() {
        for (j, &v) in t.data().iter().enumerate() {
            let mean = ps.iter().map(|p| p.get(name).unwrap().data()[j]).sum::<f64>() / 5.0;
            assert!((v - mean).abs() <= 1e-15 * mean.abs().max(1.0), "{name}[{j}]");
        }
    }
}

#[test]
fn steadily_improving_validation_never_stops() {
    let cfg = TrainConfig {
        patience_epochs: 5,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(init(Flavor::Ar, 0), cfg).unwrap();
    for e in 0..50 {
        tr.state.epoch += 1;
        assert!(!tr.observe_validation(10.0 - e as f64 * 0.1));
    }
}

#[test]
fn stalled_validation_stops_after_patience() {
    let cfg = TrainConfig {
        patience_epochs: 3,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(init(Flavor::Ar, 0), cfg).unwrap();
    let curve = [5.0, 4.0, 4.5, 4.2, 4.0];
    let mut stops = Vec::new();
    for v in curve {
        tr.state.epoch += 1;
        stops.push(tr.observe_validation(v));
    }
    assert_eq!(stops, vec![false, false, false, false, true]);
}

#[test]
fn batches_cover_the_corpus_within_budget() {
    let pairs = toy_pairs(100);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batches = make_batches(&pairs, 40, &mut rng);
    let mut seen: Vec<usize> = batches.concat();
    seen.sort();
    assert_eq!(seen, (0..100).collect::<Vec<_>>());
    for b in &batches {
        let w = b.iter().map(|&i| pairs[i].src.len().max(pairs[i].tgt.len() + 1)).max().unwrap();
        assert!(b.len() == 1 || w * b.len() <= 40);
    }
}

#[test]
fn seeded_training_is_reproducible() {
    let pairs = toy_pairs(24);
    let cfg = TrainConfig {
        batch_tokens: 60,
        warmup_steps: 4,
        max_epochs: 3,
        average_last_k: 2,
        ..TrainConfig::default()
    };
    let run = || train(init(Flavor::Nar, 4), &pairs, &pairs[..4], &cfg, &mut |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 3);
    assert!(a.curve.iter().all(|r| r.wall_seconds.is_none()));
}

#[test]
fn training_loss_falls_over_early_epochs() {
    let pairs = toy_pairs(64);
    let cfg = TrainConfig {
        batch_tokens: 80,
        warmup_steps: 20,
        peak_lr: 3e-3,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let out = train(init(Flavor::Ar, 5), &pairs, &[], &cfg, &mut |_| {}).unwrap();
    for w in out.curve.windows(2) {
        assert!(w[1].train_loss < w[0].train_loss, "{:?}", out.curve);
    }
}

#[test]
fn non_finite_loss_aborts() {
    let mut p = init(Flavor::Ar, 6);
    p.get_mut(EMBED).unwrap().data_mut()[20] = f64::NAN;
    let mut tr = Trainer::new(p, TrainConfig::default()).unwrap();
    let pair = Pair::new(vec![5, 6], vec![7]);
    assert!(matches!(tr.step(&[&pair]), Err(Error::Diverged { step: 1, .. })));
}

#[test]
fn empty_corpus_and_bad_config_are_rejected() {
    assert!(train(init(Flavor::Ar, 0), &[], &[], &TrainConfig::default(), &mut |_| {}).is_err());
    let bad = TrainConfig {
        label_smoothing: 1.0,
        ..TrainConfig::default()
    };
    assert!(Trainer::new(init(Flavor::Ar, 0), bad).is_err());
}

#[test]
fn student_takes_encoder_and_embeddings_from_teacher() {
    let teacher = init(Flavor::Ar, 7);
    let student = init_student_from_teacher(&teacher, init(Flavor::Nar, 8)).unwrap();
    for (name, t) in teacher.iter() {
        if name == EMBED || name.starts_with("encoder.") {
            assert_eq!(student.get(name).unwrap(), t, "{name}");
        }
    }
    assert_ne!(
        student.get("decoder.layer0.self_attn.wq").unwrap(),
        teacher.get("decoder.layer0.self_attn.wq").unwrap()
    );
    let src = [4, 6, 8, 10];
    assert_eq!(encode(&student, &src).unwrap(), encode(&teacher, &src).unwrap());
}

#[test]
fn mismatched_dimensions_block_student_init() {
    let teacher = init(Flavor::Ar, 7);
    let mut cfg = tiny(Flavor::Nar);
    cfg.model_dim = 8;
    let student = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(init_student_from_teacher(&teacher, student).is_err());
}

#[test]
fn smoothed_loss_of_nar_batch_matches_direct_formula() {
    let p = init(Flavor::Nar, 9);
    let pair = Pair::new(vec![4, 5, 6], vec![7, 8]);
    let dist = crate::nar::nar_forward(&p, &pair.src, 2).unwrap();
    let direct = smoothed_ce_loss(&dist, &pair.tgt, 0.1).unwrap();
    let via = corpus_loss(&p, &[pair], 0.1).unwrap();
    assert!((direct - via).abs() < 1e-12);
}
