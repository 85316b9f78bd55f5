//! Teacher inference: encoding, step distributions, greedy decoding and
//! sequence scoring.

use crate::data::vocab::{Padded, TokenSequence, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Flavor, Forward, ModelParams};

/// Sentences per inference batch.
pub const INFERENCE_BATCH: usize = 128;

/// Groups sentence indices into batches of similar length. Deterministic.
pub fn length_sorted_chunks<S: AsRef<[usize]>>(seqs: &[S], size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| (seqs[i].as_ref().len(), i));
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Encoder states `[B, Ts, d]` and source lengths for a batch.
pub fn encoder_states_batch<S: AsRef<[usize]>>(params: &ModelParams, srcs: &[S]) -> Result<(Tensor, Vec<usize>)> {
    let batch = Padded::new(srcs);
    let mut fw = Forward::inference(params);
    let enc = fw.encoder(&batch)?;
    Ok((fw.g.value(enc).clone(), batch.lens))
}

/// Encoder output `[T, d]` for one sentence.
pub fn encode(params: &ModelParams, src: &[usize]) -> Result<Tensor> {
    if src.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    let (states, _) = encoder_states_batch(params, &[src])?;
    let d = params.config().model_dim;
    states.reshape(&[src.len(), d])
}

fn check_teacher(params: &ModelParams) -> Result<()> {
    if params.config().flavor != Flavor::Ar {
        return Err(Error::invalid("autoregressive decoding needs an AR parameter set"));
    }
    Ok(())
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Log-probabilities `[prefix_len, vocab]` for every prefix position of a
/// teacher-forced decoder input starting with BOS.
pub fn teacher_forced_logprobs(params: &ModelParams, src: &[usize], dec_in: &[usize]) -> Result<Tensor> {
    check_teacher(params)?;
    let sb = Padded::new(&[src]);
    let db = Padded::new(&[dec_in]);
    let mut fw = Forward::inference(params);
    let enc = fw.encoder(&sb)?;
    let logits = fw.ar_logits(enc, &sb.lens, &db)?;
    let lv = fw.g.value(logits);
    let v = params.config().vocab_size;
    let data = (0..dec_in.len()).flat_map(|t| log_softmax_row(lv.row(t))).collect();
    Tensor::new(vec![dec_in.len(), v], data)
}

/// Next-token distribution given encoder output `[T, d]` and a BOS-initial prefix.
pub fn ar_decode_step(params: &ModelParams, enc_out: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
    check_teacher(params)?;
    if prefix.first() != Some(&BOS) {
        return Err(Error::invalid("decoder prefix must start with BOS"));
    }
    let max_len = params.config().max_len;
    if prefix.len() > max_len {
        return Err(Error::TooLong {
            len: prefix.len(),
            max_len,
        });
    }
    let (t, d) = (enc_out.shape()[0], enc_out.shape()[1]);
    let mut fw = Forward::inference(params);
    let enc = fw.g.constant(enc_out.clone().reshape(&[1, t, d])?);
    let logits = fw.ar_logits(enc, &[t], &Padded::new(&[prefix]))?;
    let row = fw.g.value(logits).row(prefix.len() - 1);
    Ok(log_softmax_row(row).into_iter().map(f64::exp).collect())
}

/// Decoding cap for a source of `src_len` tokens: `2·T + 8`, bounded by the
/// positions the decoder can address.
pub fn decode_cap(params: &ModelParams, src_len: usize) -> usize {
    (2 * src_len + 8).min(params.config().max_len - 1)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Beam-1 decoding; the result excludes BOS and EOS.
pub fn greedy_decode(params: &ModelParams, src: &[usize], max_len: Option<usize>) -> Result<TokenSequence> {
    let cap = max_len.unwrap_or_else(|| decode_cap(params, src.len()));
    Ok(greedy_decode_capped(params, &[src], &[cap])?.remove(0))
}

/// Beam-1 decoding of many sources, batched by length.
pub fn greedy_decode_batch<S: AsRef<[usize]>>(params: &ModelParams, srcs: &[S]) -> Result<Vec<TokenSequence>> {
    let caps: Vec<usize> = srcs.iter().map(|s| decode_cap(params, s.as_ref().len())).collect();
    greedy_decode_capped(params, srcs, &caps)
}

fn greedy_decode_capped<S: AsRef<[usize]>>(params: &ModelParams, srcs: &[S], caps: &[usize]) -> Result<Vec<TokenSequence>> {
    check_teacher(params)?;
    let mut out = vec![Vec::new(); srcs.len()];
    for chunk in length_sorted_chunks(srcs, INFERENCE_BATCH) {
        let chunk_srcs: Vec<&[usize]> = chunk.iter().map(|&i| srcs[i].as_ref()).collect();
        let chunk_caps: Vec<usize> = chunk.iter().map(|&i| caps[i]).collect();
        let decoded = greedy_chunk(params, &chunk_srcs, &chunk_caps)?;
        for (i, seq) in chunk.into_iter().zip(decoded) {
            out[i] = seq;
        }
    }
    Ok(out)
}

fn greedy_chunk(params: &ModelParams, srcs: &[&[usize]], caps: &[usize]) -> Result<Vec<TokenSequence>> {
    let (states, src_lens) = encoder_states_batch(params, srcs)?;
    let (ts, d) = (states.shape()[1], states.shape()[2]);
    let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; srcs.len()];
    let mut active: Vec<usize> = (0..srcs.len()).filter(|&b| caps[b] > 0).collect();
    while !active.is_empty() {
        let mut enc = Vec::with_capacity(active.len() * ts * d);
        for &b in &active {
            enc.extend_from_slice(&states.data()[b * ts * d..(b + 1) * ts * d]);
        }
        let enc = Tensor::new(vec![active.len(), ts, d], enc)?;
        let lens: Vec<usize> = active.iter().map(|&b| src_lens[b]).collect();
        let dec: Vec<&[usize]> = active.iter().map(|&b| prefixes[b].as_slice()).collect();
        let dec = Padded::new(&dec);
        let mut fw = Forward::inference(params);
        let enc = fw.g.constant(enc);
        let logits = fw.ar_logits(enc, &lens, &dec)?;
        let lv = fw.g.value(logits);
        let step = dec.width - 1;
        let mut still = Vec::with_capacity(active.len());
        for (j, &b) in active.iter().enumerate() {
            let next = argmax(lv.row(j * dec.width + step));
            prefixes[b].push(next);
            let produced = prefixes[b].len() - 1;
            if next != EOS && produced < caps[b] {
                still.push(b);
            }
        }
        active = still;
    }
    Ok(prefixes
        .into_iter()
        .map(|p| p.into_iter().skip(1).take_while(|&t| t != EOS).collect())
        .collect())
}

/// Teacher log-probability of a target sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceScore {
    /// `Σ_t log P(tgt_t | tgt_<t, src)` over the given tokens.
    pub sum: f64,
    /// `sum / len`.
    pub mean: f64,
}

/// Scores exactly the tokens in `tgt` (append EOS to score a complete sentence).
pub fn sequence_logprob(params: &ModelParams, src: &[usize], tgt: &[usize]) -> Result<SequenceScore> {
    Ok(sequence_logprob_batch(params, &[src], &[tgt])?.remove(0))
}

pub fn sequence_logprob_batch<S: AsRef<[usize]>, T: AsRef<[usize]>>(params: &ModelParams, srcs: &[S], tgts: &[T]) -> Result<Vec<SequenceScore>> {
    check_teacher(params)?;
    if srcs.len() != tgts.len() {
        return Err(Error::invalid("one target per source required"));
    }
    if tgts.iter().any(|t| t.as_ref().is_empty()) {
        return Err(Error::Empty("scored target"));
    }
    let mut out = vec![SequenceScore { sum: 0.0, mean: 0.0 }; srcs.len()];
    for chunk in length_sorted_chunks(tgts, INFERENCE_BATCH) {
        let sb: Vec<&[usize]> = chunk.iter().map(|&i| srcs[i].as_ref()).collect();
        let dec: Vec<Vec<usize>> = chunk
            .iter()
            .map(|&i| {
                let t = tgts[i].as_ref();
                std::iter::once(BOS).chain(t[..t.len() - 1].iter().copied()).collect()
            })
            .collect();
        let sb = Padded::new(&sb);
        let db = Padded::new(&dec);
        let mut fw = Forward::inference(params);
        let enc = fw.encoder(&sb)?;
        let logits = fw.ar_logits(enc, &sb.lens, &db)?;
        let lv = fw.g.value(logits);
        for (b, &i) in chunk.iter().enumerate() {
            let t = tgts[i].as_ref();
            let sum: f64 = t
                .iter()
                .enumerate()
                .map(|(pos, &tok)| log_softmax_row(lv.row(b * db.width + pos))[tok])
                .sum();
            out[i] = SequenceScore {
                sum,
                mean: sum / t.len() as f64,
            };
        }
    }
    Ok(out)
}
