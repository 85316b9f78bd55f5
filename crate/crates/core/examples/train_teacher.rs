//! Trains a small autoregressive teacher on mapped reversal and reports
//! its greedy accuracy on the test split.
//!
//! `cargo run --release --example train_teacher -- [epochs]` (about a minute at the default 12)

use narmt::model::{greedy_decode_batch, Flavor, ModelConfig, ModelParams};
use narmt::synth::{generate_corpus, SplitSizes, TaskKind, TaskSpec};
use narmt::train::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> narmt::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let spec = TaskSpec::desk(TaskKind::MappedReversal);
    let corpus = generate_corpus(&spec, SplitSizes { train: 4000, valid: 200, test: 200 }, 1)?;
    let model = ModelConfig::desk(spec.total_vocab(), Flavor::Ar);
    let init = ModelParams::init(model, &mut ChaCha8Rng::seed_from_u64(1))?;
    let config = TrainConfig {
        max_epochs: epochs,
        warmup_steps: 200,
        ..TrainConfig::default()
    };
    let outcome = train(init, &corpus.train, &corpus.valid, &config, &mut |r| {
        println!("epoch {:>2}  train {:.3}  valid {:.3}", r.epoch, r.train_loss, r.valid_loss.unwrap_or(f64::NAN));
    })?;
    let srcs: Vec<&[usize]> = corpus.test.iter().map(|p| p.src.as_slice()).collect();
    let out = greedy_decode_batch(&outcome.params, &srcs)?;
    let exact = out.iter().zip(&corpus.test).filter(|(o, p)| **o == p.tgt).count();
    println!("exact greedy matches: {exact}/{}", corpus.test.len());
    Ok(())
}
