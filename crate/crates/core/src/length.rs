//! Target-length candidates and length-parallel decoding with teacher
//! reranking.

use serde::{Deserialize, Serialize};

use crate::data::vocab::{TokenSequence, EOS};
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::model::{sequence_logprob_batch, ModelParams, SequenceScore};
use crate::nar::nar_emit_batch;

/// Target length `T + C` widened by `±B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPolicy {
    pub offset: i64,
    pub half_width: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    #[default]
    SumLogprob,
    MeanLogprob,
}

impl RankMode {
    pub fn pick(self, s: &SequenceScore) -> f64 {
        match self {
            RankMode::SumLogprob => s.sum,
            RankMode::MeanLogprob => s.mean,
        }
    }
}

impl std::str::FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_logprob" | "sum" => Ok(RankMode::SumLogprob),
            "mean_logprob" | "mean" => Ok(RankMode::MeanLogprob),
            other => Err(Error::invalid(format!(
                "unknown rank mode {other:?} (expected sum_logprob or mean_logprob)"
            ))),
        }
    }
}

/// Mean target-minus-source length, rounded half away from zero.
pub fn estimate_c(pairs: &[Pair]) -> Result<i64> {
    if pairs.is_empty() {
        return Err(Error::Empty("corpus for length offset"));
    }
    let diff: i64 = pairs.iter().map(|p| p.tgt.len() as i64 - p.src.len() as i64).sum();
    Ok((diff as f64 / pairs.len() as f64).round() as i64)
}

/// `T+C-B ..= T+C+B` with lengths below 1 dropped; `[1]` if nothing remains.
pub fn candidate_lengths(src_len: usize, policy: LengthPolicy) -> Vec<usize> {
    let center = src_len as i64 + policy.offset;
    let b = policy.half_width as i64;
    let out: Vec<usize> = (center - b..=center + b).filter(|&l| l >= 1).map(|l| l as usize).collect();
    if out.is_empty() {
        vec![1]
    } else {
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub length: usize,
    pub tokens: TokenSequence,
    /// Teacher score of `tokens` followed by EOS.
    pub score: SequenceScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthDecode {
    pub candidates: Vec<Candidate>,
    pub chosen: usize,
}

impl LengthDecode {
    pub fn output(&self) -> &TokenSequence {
        &self.candidates[self.chosen].tokens
    }
}

/// Index of the best candidate: highest score, then the length nearest
/// `target`, then the shorter length.
pub fn select_candidate(candidates: &[(usize, f64)], target: i64) -> usize {
    let mut best = 0;
    for (i, &(len, score)) in candidates.iter().enumerate().skip(1) {
        let (blen, bscore) = candidates[best];
        let dist = (len as i64 - target).abs();
        let bdist = (blen as i64 - target).abs();
        let better = score > bscore || (score == bscore && (dist < bdist || (dist == bdist && len < blen)));
        if better {
            best = i;
        }
    }
    best
}

/// Emits one student output per candidate length and keeps the one the
/// teacher scores highest.
pub fn length_parallel_decode(
    student: &ModelParams,
    teacher: &ModelParams,
    src: &[usize],
    policy: LengthPolicy,
    mode: RankMode,
) -> Result<LengthDecode> {
    Ok(length_parallel_decode_batch(student, teacher, &[src], policy, mode)?.remove(0))
}

pub fn length_parallel_decode_batch<S: AsRef<[usize]>>(
    student: &ModelParams,
    teacher: &ModelParams,
    srcs: &[S],
    policy: LengthPolicy,
    mode: RankMode,
) -> Result<Vec<LengthDecode>> {
    if student.config().vocab_size != teacher.config().vocab_size {
        return Err(Error::invalid("student and teacher vocabularies differ"));
    }
    let max_len = student.config().max_len;
    let mut flat_src: Vec<&[usize]> = Vec::new();
    let mut flat_len = Vec::new();
    let mut owner = Vec::new();
    for (i, s) in srcs.iter().enumerate() {
        let s = s.as_ref();
        if s.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        for l in candidate_lengths(s.len(), policy) {
            flat_src.push(s);
            flat_len.push(l.min(max_len));
            owner.push(i);
        }
    }
    let emitted = nar_emit_batch(student, &flat_src, &flat_len)?;
    let scored: Vec<Vec<usize>> = emitted.iter().map(|t| t.iter().copied().chain([EOS]).collect()).collect();
    let scores = sequence_logprob_batch(teacher, &flat_src, &scored)?;
    let mut out: Vec<Vec<Candidate>> = vec![Vec::new(); srcs.len()];
    for (((i, length), tokens), score) in owner.into_iter().zip(flat_len).zip(emitted).zip(scores) {
        out[i].push(Candidate { length, tokens, score });
    }
    Ok(out
        .into_iter()
        .zip(srcs)
        .map(|(candidates, s)| {
            let keyed: Vec<(usize, f64)> = candidates.iter().map(|c| (c.length, mode.pick(&c.score))).collect();
            let chosen = select_candidate(&keyed, s.as_ref().len() as i64 + policy.offset);
            LengthDecode { candidates, chosen }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pol(offset: i64, half_width: usize) -> LengthPolicy {
        LengthPolicy { offset, half_width }
    }

    fn pair(s: usize, t: usize) -> Pair {
        Pair::new(vec![4; s], vec![5; t])
    }

    #[test]
    fn offset_estimates() {
        assert_eq!(estimate_c(&[pair(3, 3), pair(7, 7)]).unwrap(), 0);
        assert_eq!(estimate_c(&[pair(3, 4), pair(3, 4), pair(3, 5)]).unwrap(), 1);
        assert_eq!(estimate_c(&[pair(4, 3), pair(4, 4)]).unwrap(), -1);
        assert_eq!(estimate_c(&[pair(4, 5), pair(4, 4)]).unwrap(), 1);
        assert!(estimate_c(&[]).is_err());
    }

    #[test]
    fn candidate_examples() {
        assert_eq!(candidate_lengths(5, pol(1, 2)), vec![4, 5, 6, 7, 8]);
        assert_eq!(candidate_lengths(9, pol(-2, 0)), vec![7]);
        assert_eq!(candidate_lengths(1, pol(0, 3)), vec![1, 2, 3, 4]);
        assert_eq!(candidate_lengths(1, pol(-5, 1)), vec![1]);
    }

    #[test]
    fn candidate_sets_nest_in_half_width() {
        for t in 1..15 {
            for c in -4..4 {
                for b in 0..6 {
                    let small = candidate_lengths(t, pol(c, b));
                    let big = candidate_lengths(t, pol(c, b + 1));
                    assert!(small.iter().all(|l| big.contains(l)), "{t} {c} {b}");
                    assert!(small.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }

    #[test]
    fn ties_prefer_nearest_then_shorter() {
        assert_eq!(select_candidate(&[(4, -1.0), (5, -1.0), (6, -1.0)], 5), 1);
        assert_eq!(select_candidate(&[(4, -1.0), (6, -1.0)], 5), 0);
        assert_eq!(select_candidate(&[(4, -1.0), (6, -0.5)], 5), 1);
        assert_eq!(select_candidate(&[(3, -2.0), (7, -2.0), (6, -2.0)], 5), 2);
    }

    #[test]
    fn rank_mode_parses() {
        assert_eq!("mean_logprob".parse::<RankMode>().unwrap(), RankMode::MeanLogprob);
        assert!("best".parse::<RankMode>().is_err());
    }
}
