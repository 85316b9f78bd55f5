//! Building the student's training corpus from teacher decodes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::TokenSequence;
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::model::{greedy_decode_batch, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Parallel,
    Monolingual,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistilledPair {
    pub pair: Pair,
    pub origin: Origin,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DistilledCorpus {
    pub pairs: Vec<DistilledPair>,
    /// Sources whose decode came back empty and were left out.
    pub dropped_empty: usize,
}

impl DistilledCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_pairs(&self) -> Vec<Pair> {
        self.pairs.iter().map(|p| p.pair.clone()).collect()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.pairs.iter().filter(|p| p.origin == origin).count()
    }
}

/// Pairs every source with the teacher's greedy decode, in input order.
pub fn distill_corpus<S: AsRef<[usize]>>(teacher: &ModelParams, sources: &[S], origin: Origin) -> Result<DistilledCorpus> {
    let decoded = greedy_decode_batch(teacher, sources)?;
    let mut out = DistilledCorpus::default();
    for (src, tgt) in sources.iter().zip(decoded) {
        if tgt.is_empty() {
            out.dropped_empty += 1;
        } else {
            out.pairs.push(DistilledPair {
                pair: Pair::new(src.as_ref().to_vec(), tgt),
                origin,
            });
        }
    }
    Ok(out)
}

/// All parallel-origin pairs plus the first `fraction` of a seeded shuffle of
/// the monolingual pairs, in seeded random order. Selections at a smaller
/// fraction are prefixes of those at a larger one under the same seed.
pub fn mix_monolingual(
    parallel: &DistilledCorpus,
    mono: &DistilledCorpus,
    fraction: f64,
    seed: u64,
) -> Result<DistilledCorpus> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("monolingual fraction must be in [0, 1], got {fraction}")));
    }
    let mut order: Vec<usize> = (0..mono.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = (fraction * mono.len() as f64).round() as usize;
    let mut pairs = parallel.pairs.clone();
    pairs.extend(order[..take].iter().map(|&i| mono.pairs[i].clone()));
    if fraction > 0.0 {
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    }
    Ok(DistilledCorpus {
        pairs,
        dropped_empty: parallel.dropped_empty + mono.dropped_empty,
    })
}

/// Collapses each run of identical adjacent tokens to one token.
pub fn dedup_adjacent(seq: &[usize]) -> TokenSequence {
    let mut out = seq.to_vec();
    out.dedup();
    out
}
