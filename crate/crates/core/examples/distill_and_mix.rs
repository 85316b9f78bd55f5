//! Distills parallel and monolingual sources through a briefly trained
//! teacher, then mixes the two corpora at several fractions.

use narmt::distill::{distill_corpus, mix_monolingual, Origin};
use narmt::model::{Flavor, ModelConfig, ModelParams};
use narmt::synth::{generate_corpus, generate_monolingual, SplitSizes, TaskKind, TaskSpec};
use narmt::train::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> narmt::Result<()> {
    let spec = TaskSpec::desk(TaskKind::MappedReversal);
    let corpus = generate_corpus(&spec, SplitSizes { train: 600, valid: 50, test: 50 }, 1)?;
    let mut cfg = ModelConfig::desk(spec.total_vocab(), Flavor::Ar);
    cfg.model_dim = 32;
    cfg.hidden_dim = 64;
    let teacher = train(
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1))?,
        &corpus.train,
        &corpus.valid,
        &TrainConfig { max_epochs: 3, warmup_steps: 50, ..TrainConfig::default() },
        &mut |_| {},
    )?
    .params;

    let srcs: Vec<&[usize]> = corpus.train.iter().map(|p| p.src.as_slice()).collect();
    let parallel = distill_corpus(&teacher, &srcs, Origin::Parallel)?;
    let mono_src = generate_monolingual(&spec, 400, 2, corpus.sources())?;
    let mono = distill_corpus(&teacher, &mono_src, Origin::Monolingual)?;
    println!(
        "distilled {} parallel and {} monolingual pairs ({} empty outputs dropped)",
        parallel.len(),
        mono.len(),
        parallel.dropped_empty + mono.dropped_empty
    );
    let p = &parallel.pairs[0].pair;
    println!("gold {:?}\nteacher {:?}", corpus.train[0].tgt, p.tgt);
    for fraction in [0.0, 0.25, 0.5, 1.0] {
        let mixed = mix_monolingual(&parallel, &mono, fraction, 3)?;
        println!(
            "fraction {fraction:<4}: {} pairs, {} from monolingual sources",
            mixed.len(),
            mixed.count(Origin::Monolingual)
        );
    }
    Ok(())
}
