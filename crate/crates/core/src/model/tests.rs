use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::vocab::{Padded, BOS, EOS};
use crate::error::Error;
use crate::tensor::Tensor;

fn tiny(flavor: Flavor) -> ModelConfig {
    ModelConfig {
        num_heads: 2,
        model_dim: 16,
        hidden_dim: 32,
        max_len: 32,
        ..ModelConfig::desk(12, flavor)
    }
}

fn teacher(seed: u64) -> ModelParams {
    ModelParams::init(tiny(Flavor::Ar), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn encoder_output_has_source_shape_and_is_deterministic() {
    let p = teacher(1);
    let src = [4, 7, 9, 5, 11];
    let a = encode(&p, &src).unwrap();
    assert_eq!(a.shape(), &[5, 16]);
    assert_eq!(a, encode(&p, &src).unwrap());
    assert!(a.data().iter().all(|v| v.is_finite()));
}

#[test]
fn encoder_is_sensitive_to_token_order() {
    let p = teacher(1);
    let a = encode(&p, &[4, 7, 9]).unwrap();
    let b = encode(&p, &[9, 7, 4]).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-3);
}

#[test]
fn empty_and_out_of_range_sources_are_rejected() {
    let p = teacher(1);
    assert!(matches!(encode(&p, &[]), Err(Error::Empty(_))));
    assert!(matches!(encode(&p, &[4, 99]), Err(Error::TokenOutOfRange { .. })));
}

#[test]
fn padding_does_not_change_encoder_states() {
    let p = teacher(2);
    let short = [4, 5, 6];
    let (batched, lens) = encoder_states_batch(&p, &[&short[..], &[7, 8, 9, 10, 11, 4][..]]).unwrap();
    assert_eq!(lens, vec![3, 6]);
    let alone = encode(&p, &short).unwrap();
    let first: Vec<f64> = batched.data()[..3 * 16].to_vec();
    let diff = first.iter().zip(alone.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn zero_embeddings_give_uniform_next_token_distribution() {
    let mut p = teacher(3);
    for v in p.get_mut(EMBED).unwrap().data_mut() {
        *v = 0.0;
    }
    let enc = encode(&p, &[4, 5, 6]).unwrap();
    let dist = ar_decode_step(&p, &enc, &[BOS, 7]).unwrap();
    assert_eq!(dist.len(), 12);
    for q in dist {
        assert!((q - 1.0 / 12.0).abs() < 1e-12);
    }
}

#[test]
fn decode_step_is_a_distribution() {
    let p = teacher(3);
    let enc = encode(&p, &[4, 5, 6]).unwrap();
    let dist = ar_decode_step(&p, &enc, &[BOS, 8, 9]).unwrap();
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(dist.iter().all(|&q| q > 0.0));
}

#[test]
fn decode_step_argument_errors() {
    let p = teacher(3);
    let enc = encode(&p, &[4, 5]).unwrap();
    assert!(ar_decode_step(&p, &enc, &[7, 8]).is_err());
    let long = std::iter::once(BOS).chain(std::iter::repeat_n(5, 40)).collect::<Vec<_>>();
    assert!(matches!(ar_decode_step(&p, &enc, &long), Err(Error::TooLong { .. })));
    let student = ModelParams::init(tiny(Flavor::Nar), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(ar_decode_step(&student, &enc, &[BOS]).is_err());
}

#[test]
fn decoder_is_causal() {
    let p = teacher(4);
    let src = [4, 5, 6, 7];
    let a = teacher_forced_logprobs(&p, &src, &[BOS, 8, 9, 10]).unwrap();
    let b = teacher_forced_logprobs(&p, &src, &[BOS, 8, 11, 4]).unwrap();
    for t in 0..2 {
        let d = a.row(t).iter().zip(b.row(t)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12, "position {t} saw the future");
    }
    let d2 = a.row(2).iter().zip(b.row(2)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d2 > 1e-6);
}

#[test]
fn sequence_logprob_sums_stepwise_log_probabilities() {
    let p = teacher(5);
    let src = [4, 9, 6];
    let tgt = [7, 5, 10, EOS];
    let enc = encode(&p, &src).unwrap();
    let mut prefix = vec![BOS];
    let mut oracle = 0.0;
    for &tok in &tgt {
        oracle += ar_decode_step(&p, &enc, &prefix).unwrap()[tok].ln();
        prefix.push(tok);
    }
    let s = sequence_logprob(&p, &src, &tgt).unwrap();
    assert!((s.sum - oracle).abs() < 1e-10, "{} vs {oracle}", s.sum);
    assert!((s.mean - oracle / 4.0).abs() < 1e-10);
}

#[test]
fn batched_scoring_matches_single_scoring() {
    let p = teacher(6);
    let srcs = vec![vec![4, 5, 6], vec![7, 8, 9, 10, 11], vec![4]];
    let tgts = vec![vec![5, 5, EOS], vec![9, EOS], vec![11, 10, 9, 8, 7, EOS]];
    let batch = sequence_logprob_batch(&p, &srcs, &tgts).unwrap();
    for i in 0..3 {
        let one = sequence_logprob(&p, &srcs[i], &tgts[i]).unwrap();
        assert!((one.sum - batch[i].sum).abs() < 1e-12);
    }
}

#[test]
fn greedy_decoding_follows_step_argmax_and_is_deterministic() {
    let p = teacher(7);
    let src = [4, 5, 6, 7];
    let out = greedy_decode(&p, &src, Some(6)).unwrap();
    assert!(out.len() <= 6);
    assert_eq!(out, greedy_decode(&p, &src, Some(6)).unwrap());
    let enc = encode(&p, &src).unwrap();
    let mut prefix = vec![BOS];
    for _ in 0..6 {
        let dist = ar_decode_step(&p, &enc, &prefix).unwrap();
        let mut best = 0;
        for (i, &q) in dist.iter().enumerate() {
            if q > dist[best] {
                best = i;
            }
        }
        if best == EOS {
            break;
        }
        prefix.push(best);
    }
    assert_eq!(out, prefix[1..].to_vec());
}

#[test]
fn batched_greedy_matches_one_at_a_time() {
    let p = teacher(8);
    let srcs: Vec<Vec<usize>> = (0..7).map(|i| (0..(2 + i % 4)).map(|j| 4 + (i * 3 + j) % 8).collect()).collect();
    let batch = greedy_decode_batch(&p, &srcs).unwrap();
    for (s, b) in srcs.iter().zip(&batch) {
        assert_eq!(&greedy_decode(&p, s, None).unwrap(), b);
    }
}

#[test]
fn decode_cap_respects_positions() {
    let p = teacher(1);
    assert_eq!(decode_cap(&p, 3), 14);
    assert_eq!(decode_cap(&p, 20), 31);
}

#[test]
fn chunks_cover_every_index_once() {
    let seqs: Vec<Vec<usize>> = (0..300).map(|i| vec![4; 1 + i % 13]).collect();
    let chunks = length_sorted_chunks(&seqs, 128);
    assert_eq!(chunks.len(), 3);
    let mut all: Vec<usize> = chunks.concat();
    all.sort();
    assert_eq!(all, (0..300).collect::<Vec<_>>());
}

#[test]
fn attention_masks() {
    let m = AttentionMask::causal(&[2, 3], 3);
    assert!(m.allowed(0, 1, 0) && m.allowed(0, 1, 1) && !m.allowed(0, 0, 1));
    assert!(!m.allowed(0, 2, 2));
    let nc = AttentionMask::non_causal(&[2], 3);
    assert!(nc.allowed(0, 0, 1) && !nc.allowed(0, 0, 2));
}

#[test]
fn ar_logits_shape() {
    let p = teacher(1);
    let mut fw = Forward::inference(&p);
    let src = Padded::new(&[vec![4, 5], vec![6, 7, 8]]);
    let enc = fw.encoder(&src).unwrap();
    let dec = Padded::new(&[vec![BOS, 4], vec![BOS]]);
    let logits = fw.ar_logits(enc, &src.lens, &dec).unwrap();
    assert_eq!(fw.g.shape(logits), &[2, 2, 12]);
}

#[test]
fn sinusoid_table_values() {
    let t: Tensor = sinusoidal(4, 6);
    assert_eq!(t.shape(), &[4, 6]);
    assert_eq!(t.row(0)[0], 0.0);
    assert_eq!(t.row(0)[1], 1.0);
    assert!((t.row(1)[0] - 1f64.sin()).abs() < 1e-15);
}
