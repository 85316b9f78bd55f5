//! Toy translation tasks with exact oracles.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::vocab::{TokenSequence, Vocabulary, NUM_RESERVED};
use crate::data::Pair;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Target is the reversed source, each id mapped through π.
    MappedReversal,
    /// Every even-id source token appears twice, then ids map through π.
    EvenDuplication,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of content tokens (reserved ids come on top).
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Seed of the token permutation π; `None` means the identity.
    pub perm_seed: Option<u64>,
}

impl TaskSpec {
    pub fn desk(kind: TaskKind) -> Self {
        TaskSpec {
            kind,
            vocab_size: 32,
            min_len: 3,
            max_len: 12,
            perm_seed: Some(7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "task needs vocab_size >= 1 and 1 <= min_len <= max_len, got {} / [{}, {}]",
                self.vocab_size, self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.vocab_size)
    }

    /// Full vocabulary size including reserved ids.
    pub fn total_vocab(&self) -> usize {
        self.vocab_size + NUM_RESERVED
    }

    /// π as a lookup table over all ids; reserved ids map to themselves.
    pub fn permutation(&self) -> Vec<usize> {
        let mut content: Vec<usize> = (NUM_RESERVED..self.total_vocab()).collect();
        if let Some(seed) = self.perm_seed {
            content.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        (0..NUM_RESERVED).chain(content).collect()
    }

    /// Longest target the oracle can produce.
    pub fn max_target_len(&self) -> usize {
        match self.kind {
            TaskKind::MappedReversal => self.max_len,
            TaskKind::EvenDuplication => 2 * self.max_len,
        }
    }
}

/// Ground-truth target for `src`.
pub fn task_oracle(spec: &TaskSpec, src: &[usize]) -> TokenSequence {
    let pi = spec.permutation();
    let map = |t: usize| pi.get(t).copied().unwrap_or(t);
    match spec.kind {
        TaskKind::MappedReversal => src.iter().rev().map(|&t| map(t)).collect(),
        TaskKind::EvenDuplication => src
            .iter()
            .flat_map(|&t| {
                let reps = if t % 2 == 0 { 2 } else { 1 };
                std::iter::repeat_n(map(t), reps)
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub spec: TaskSpec,
    pub train: Vec<Pair>,
    pub valid: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl ParallelCorpus {
    pub fn sources(&self) -> impl Iterator<Item = &TokenSequence> {
        self.train.iter().chain(&self.valid).chain(&self.test).map(|p| &p.src)
    }
}

/// Position of a sentence in `[0, 1)` under a seeded hash.
fn hash_unit(seed: u64, seq: &[usize]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for &t in seq {
        h.update((t as u64).to_le_bytes());
    }
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Split a sentence belongs to; depends only on the sentence, the seed and
/// the split proportions, so no sentence can land in two splits.
pub fn assign_split(seed: u64, seq: &[usize], sizes: &SplitSizes) -> Split {
    let total = sizes.total().max(1) as f64;
    let u = hash_unit(seed, seq);
    if u < sizes.train as f64 / total {
        Split::Train
    } else if u < (sizes.train + sizes.valid) as f64 / total {
        Split::Valid
    } else {
        Split::Test
    }
}

fn random_sentence(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> TokenSequence {
    let n = rng.random_range(spec.min_len..=spec.max_len);
    (0..n).map(|_| rng.random_range(NUM_RESERVED..spec.total_vocab())).collect()
}

/// Upper bound on draws before giving up on filling the requested sizes.
fn draw_budget(n: usize) -> usize {
    100 * n + 10_000
}

/// Uniform random sources with oracle targets. Each split is filled to its
/// exact size; overflow draws for a full split are discarded.
pub fn generate_corpus(spec: &TaskSpec, sizes: SplitSizes, seed: u64) -> Result<ParallelCorpus> {
    spec.validate()?;
    if sizes.total() == 0 {
        return Err(Error::invalid("corpus size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ParallelCorpus {
        spec: spec.clone(),
        train: Vec::with_capacity(sizes.train),
        valid: Vec::with_capacity(sizes.valid),
        test: Vec::with_capacity(sizes.test),
    };
    for _ in 0..draw_budget(sizes.total()) {
        if out.train.len() == sizes.train && out.valid.len() == sizes.valid && out.test.len() == sizes.test {
            return Ok(out);
        }
        let src = random_sentence(spec, &mut rng);
        let (split, cap) = match assign_split(seed, &src, &sizes) {
            Split::Train => (&mut out.train, sizes.train),
            Split::Valid => (&mut out.valid, sizes.valid),
            Split::Test => (&mut out.test, sizes.test),
        };
        if split.len() < cap {
            let tgt = task_oracle(spec, &src);
            split.push(Pair::new(src, tgt));
        }
    }
    Err(Error::invalid(
        "could not fill the requested splits; the sentence space is too small",
    ))
}

/// Source-only sentences from the same distribution, rejecting any that
/// occur among `exclude`.
pub fn generate_monolingual<'a>(
    spec: &TaskSpec,
    n: usize,
    seed: u64,
    exclude: impl IntoIterator<Item = &'a TokenSequence>,
) -> Result<Vec<TokenSequence>> {
    spec.validate()?;
    let banned: HashSet<&TokenSequence> = exclude.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..draw_budget(n) {
        if out.len() == n {
            break;
        }
        let s = random_sentence(spec, &mut rng);
        if !banned.contains(&s) {
            out.push(s);
        }
    }
    if out.len() < n {
        return Err(Error::invalid("could not draw enough unseen monolingual sentences"));
    }
    Ok(out)
}
