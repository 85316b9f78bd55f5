//! Decodes one sentence at several candidate lengths and lets the teacher
//! choose among them. Both models are untrained here, so the point is the
//! mechanics rather than the output.

use narmt::length::{candidate_lengths, length_parallel_decode, LengthPolicy, RankMode};
use narmt::model::{Flavor, ModelConfig, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> narmt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let small = |flavor| {
        let mut c = ModelConfig::desk(36, flavor);
        c.model_dim = 16;
        c.hidden_dim = 32;
        c
    };
    let teacher = ModelParams::init(small(Flavor::Ar), &mut rng)?;
    let student = ModelParams::init(small(Flavor::Nar), &mut rng)?;
    let src = [5, 9, 12, 20, 7];
    let policy = LengthPolicy { offset: 1, half_width: 2 };
    println!("candidate lengths: {:?}", candidate_lengths(src.len(), policy));
    for mode in [RankMode::SumLogprob, RankMode::MeanLogprob] {
        let d = length_parallel_decode(&student, &teacher, &src, policy, mode)?;
        println!("{mode:?}");
        for (i, c) in d.candidates.iter().enumerate() {
            let mark = if i == d.chosen { "*" } else { " " };
            println!(" {mark} len {:>2}  score {:>8.3}  {:?}", c.length, mode.pick(&c.score), c.tokens);
        }
    }
    Ok(())
}
