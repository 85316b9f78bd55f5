//! Non-autoregressive student decoding.
//!
//! The decoder input for target position `t` (1-based) is a Gaussian-weighted
//! mix of encoder states: weight of source position `i` is proportional to
//! `exp(-(i - (T/T')·t)² / (2σ²))`, with σ² learned through `log σ²`. Self
//! attention sees the whole target, a positional table is added before every
//! decoder layer, and all positions are emitted in one pass.

use crate::data::vocab::{Padded, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{encoder_states_batch, Forward, ModelParams};
use crate::tensor::{Graph, Tensor, Var, MASK_FILL};

/// Squared-distance logits `-(i - (T/T')·t)² / 2` for every sentence, and the
/// blocked (padding) source positions, both `[B, width, Ts]`.
fn kernel_offsets(src_lens: &[usize], src_width: usize, tgt_lens: &[usize], width: usize) -> (Tensor, Vec<bool>) {
    let batch = src_lens.len();
    let mut dist = Vec::with_capacity(batch * width * src_width);
    let mut blocked = Vec::with_capacity(batch * width * src_width);
    for (&ts, &tt) in src_lens.iter().zip(tgt_lens) {
        let ratio = ts as f64 / tt as f64;
        for t in 1..=width {
            let center = ratio * t as f64;
            for i in 1..=src_width {
                let off = i as f64 - center;
                dist.push(-0.5 * off * off);
                blocked.push(i > ts);
            }
        }
    }
    let t = Tensor::new(vec![batch, width, src_width], dist).expect("positive dims");
    (t, blocked)
}

/// Soft-copied decoder inputs `[B, max(tgt_lens), d]` from encoder states
/// `enc: [B, Ts, d]`. Differentiable in both `enc` and `log_sigma_sq`.
pub fn soft_copy_graph(
    g: &mut Graph<'_>,
    enc: Var,
    log_sigma_sq: Var,
    src_lens: &[usize],
    tgt_lens: &[usize],
    normalize: bool,
) -> Result<Var> {
    let weights = soft_copy_weights_graph(g, enc, log_sigma_sq, src_lens, tgt_lens, normalize)?;
    g.matmul(weights, enc)
}

fn soft_copy_weights_graph(
    g: &mut Graph<'_>,
    enc: Var,
    log_sigma_sq: Var,
    src_lens: &[usize],
    tgt_lens: &[usize],
    normalize: bool,
) -> Result<Var> {
    let es = g.shape(enc).to_vec();
    if es.len() != 3 || es[0] != src_lens.len() || tgt_lens.len() != src_lens.len() {
        return Err(Error::invalid(format!(
            "soft copy over {es:?} with {} source and {} target lengths",
            src_lens.len(),
            tgt_lens.len()
        )));
    }
    if src_lens.iter().chain(tgt_lens).any(|&l| l == 0) {
        return Err(Error::invalid("soft copy lengths must be at least 1"));
    }
    let width = *tgt_lens.iter().max().expect("non-empty");
    let (dist, blocked) = kernel_offsets(src_lens, es[1], tgt_lens, width);
    let dist = g.constant(dist);
    let neg = g.scale(log_sigma_sq, -1.0);
    let inv_var = g.exp(neg);
    let logits = g.mul(dist, inv_var)?;
    let logits = g.masked_fill(logits, &blocked, MASK_FILL)?;
    if normalize {
        Ok(g.softmax(logits))
    } else {
        // Gaussian density: exp(logit) / sqrt(2π σ²)
        let dens = g.exp(logits);
        let half = g.scale(log_sigma_sq, -0.5);
        let inv_std = g.exp(half);
        let w = g.mul(dens, inv_std)?;
        Ok(g.scale(w, 1.0 / (2.0 * std::f64::consts::PI).sqrt()))
    }
}

/// Kernel matrix `[tgt_len, src_len]` for one sentence.
pub fn soft_copy_weights(src_len: usize, tgt_len: usize, sigma_sq: f64, normalize: bool) -> Result<Tensor> {
    if sigma_sq <= 0.0 || !sigma_sq.is_finite() {
        return Err(Error::invalid("sigma_sq must be positive"));
    }
    let mut g = Graph::new();
    let enc = g.constant(Tensor::zeros(&[1, src_len, 1]));
    let ls = g.constant(Tensor::from_vec(vec![sigma_sq.ln()]));
    let w = soft_copy_weights_graph(&mut g, enc, ls, &[src_len], &[tgt_len], normalize)?;
    g.value(w).clone().reshape(&[tgt_len, src_len])
}

/// Soft copy of one sentence's encoder states `[T, d]` to `[tgt_len, d]`.
pub fn soft_copy(enc_out: &Tensor, tgt_len: usize, sigma_sq: f64, normalize: bool) -> Result<Tensor> {
    if enc_out.rank() != 2 {
        return Err(Error::invalid(format!("encoder output must be [T, d], got {:?}", enc_out.shape())));
    }
    if sigma_sq <= 0.0 || !sigma_sq.is_finite() {
        return Err(Error::invalid("sigma_sq must be positive"));
    }
    let (t, d) = (enc_out.shape()[0], enc_out.shape()[1]);
    let mut g = Graph::new();
    let enc = g.constant(enc_out.clone().reshape(&[1, t, d])?);
    let ls = g.constant(Tensor::from_vec(vec![sigma_sq.ln()]));
    let out = soft_copy_graph(&mut g, enc, ls, &[t], &[tgt_len], normalize)?;
    g.value(out).clone().reshape(&[tgt_len, d])
}

fn check_student(params: &ModelParams) -> Result<()> {
    if params.config().flavor != crate::model::Flavor::Nar {
        return Err(Error::invalid("parallel decoding needs a NAR parameter set"));
    }
    Ok(())
}

/// Row-wise softmax of a `[B, W, V]` logits tensor, split per sentence and
/// trimmed to each length.
fn split_distributions(logits: &Tensor, lens: &[usize]) -> Vec<Tensor> {
    let (w, v) = (logits.shape()[1], logits.shape()[2]);
    lens.iter()
        .enumerate()
        .map(|(b, &len)| {
            let mut out = Vec::with_capacity(len * v);
            for t in 0..len {
                let row = logits.row(b * w + t);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| e / z));
            }
            Tensor::new(vec![len, v], out).expect("positive dims")
        })
        .collect()
}

/// Per-position distributions `[target_len, vocab]` in one parallel pass.
pub fn nar_forward(params: &ModelParams, src: &[usize], target_len: usize) -> Result<Tensor> {
    Ok(nar_forward_batch(params, &[src], &[target_len])?.remove(0))
}

pub fn nar_forward_batch<S: AsRef<[usize]>>(params: &ModelParams, srcs: &[S], target_lens: &[usize]) -> Result<Vec<Tensor>> {
    check_student(params)?;
    if srcs.len() != target_lens.len() {
        return Err(Error::invalid("one target length per source required"));
    }
    let batch = Padded::new(srcs);
    let mut fw = Forward::inference(params);
    let enc = fw.encoder(&batch)?;
    let logits = fw.nar_logits(enc, &batch.lens, target_lens)?;
    Ok(split_distributions(fw.g.value(logits), target_lens))
}

/// Distributions computed from given encoder states `[T, d]`, bypassing the encoder.
pub fn nar_forward_from_encoder(params: &ModelParams, enc_out: &Tensor, target_len: usize) -> Result<Tensor> {
    check_student(params)?;
    let (t, d) = (enc_out.shape()[0], enc_out.shape()[1]);
    let mut fw = Forward::inference(params);
    let enc = fw.g.constant(enc_out.clone().reshape(&[1, t, d])?);
    let logits = fw.nar_logits(enc, &[t], &[target_len])?;
    Ok(split_distributions(fw.g.value(logits), &[target_len]).remove(0))
}

/// Distributions from explicit decoder inputs `[T', d]` (soft copy bypassed).
pub fn nar_forward_from_inputs(params: &ModelParams, enc_out: &Tensor, decoder_inputs: &Tensor) -> Result<Tensor> {
    check_student(params)?;
    let (t, d) = (enc_out.shape()[0], enc_out.shape()[1]);
    let tt = decoder_inputs.shape()[0];
    let mut fw = Forward::inference(params);
    let enc = fw.g.constant(enc_out.clone().reshape(&[1, t, d])?);
    let x = fw.g.constant(decoder_inputs.clone().reshape(&[1, tt, d])?);
    let logits = fw.nar_decoder(x, enc, &[t], &[tt])?;
    Ok(split_distributions(fw.g.value(logits), &[tt]).remove(0))
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

/// Position-wise argmax over a `[len, vocab]` matrix; ties go to the lower id.
pub fn argmax_rows(scores: &Tensor) -> TokenSequence {
    (0..scores.shape()[0]).map(|t| argmax(scores.row(t))).collect()
}

/// Student output of exactly `target_len` tokens.
pub fn nar_greedy_emit(params: &ModelParams, src: &[usize], target_len: usize) -> Result<TokenSequence> {
    Ok(nar_emit_batch(params, &[src], &[target_len])?.remove(0))
}

/// Emits one sequence per `(source, length)` pair, batching internally.
pub fn nar_emit_batch<S: AsRef<[usize]>>(params: &ModelParams, srcs: &[S], target_lens: &[usize]) -> Result<Vec<TokenSequence>> {
    check_student(params)?;
    if srcs.len() != target_lens.len() {
        return Err(Error::invalid("one target length per source required"));
    }
    let mut out = vec![Vec::new(); srcs.len()];
    for chunk in crate::model::length_sorted_chunks(srcs, crate::model::INFERENCE_BATCH) {
        let chunk_srcs: Vec<&[usize]> = chunk.iter().map(|&i| srcs[i].as_ref()).collect();
        let lens: Vec<usize> = chunk.iter().map(|&i| target_lens[i]).collect();
        let (enc, src_lens) = encoder_states_batch(params, &chunk_srcs)?;
        let mut fw = Forward::inference(params);
        let enc = fw.g.constant(enc);
        let logits = fw.nar_logits(enc, &src_lens, &lens)?;
        let lv = fw.g.value(logits);
        let (w, v) = (lv.shape()[1], lv.shape()[2]);
        for (b, &i) in chunk.iter().enumerate() {
            out[i] = (0..lens[b]).map(|t| argmax(&lv.data()[(b * w + t) * v..(b * w + t + 1) * v])).collect();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
