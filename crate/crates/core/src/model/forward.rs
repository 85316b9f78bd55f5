//! Graph construction for the encoder and both decoder flavors.
//!
//! All activations are padded batches `[batch, width, model_dim]`. Padding
//! keys are blocked in every attention; padding queries produce values that
//! callers ignore.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::AttentionMask;
use super::params::{layer_positions_name, ModelParams, EMBED, LOG_SIGMA_SQ, OUTPUT_PROJ};
use super::positional::sinusoidal;
use crate::data::vocab::Padded;
use crate::error::{Error, Result};
use crate::nar::soft_copy_graph;
use crate::tensor::{Graph, Tensor, Var, MASK_FILL};

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-10;

pub struct Forward<'p> {
    pub g: Graph<'p>,
    params: &'p ModelParams,
    trainable: bool,
    vars: HashMap<String, Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'p> Forward<'p> {
    /// Inference graph: parameters are borrowed and receive no gradients.
    pub fn inference(params: &'p ModelParams) -> Self {
        Self::build(params, false, None)
    }

    /// Training graph with dropout drawn from `seed` (when the rate is nonzero).
    pub fn training(params: &'p ModelParams, dropout_seed: Option<u64>) -> Self {
        let rate = params.config().dropout;
        let dropout = match dropout_seed {
            Some(seed) if rate > 0.0 => Some((rate, ChaCha8Rng::seed_from_u64(seed))),
            _ => None,
        };
        Self::build(params, true, dropout)
    }

    fn build(params: &'p ModelParams, trainable: bool, dropout: Option<(f64, ChaCha8Rng)>) -> Self {
        Forward {
            g: Graph::new(),
            params,
            trainable,
            vars: HashMap::new(),
            dropout,
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    /// Graph leaf for a named parameter, bound on first use.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let t = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not declared"));
        let v = self.g.leaf_ref(t, self.trainable);
        self.vars.insert(name.to_string(), v);
        v
    }

    /// Parameters bound so far, with their leaf handles.
    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var> {
        let wv = self.param(w);
        let bv = self.param(b);
        let y = self.g.matmul(x, wv)?;
        self.g.add(y, bv)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - *rate);
        let shape = self.g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
            .collect();
        let m = self.g.constant(Tensor::new(shape, mask)?);
        self.g.mul(x, m)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.param(&format!("{prefix}.gain"));
        let bias = self.param(&format!("{prefix}.bias"));
        let y = self.g.layer_norm(x, LN_EPS);
        let y = self.g.mul(y, gain)?;
        self.g.add(y, bias)
    }

    /// Splits `[B, T, d]` into heads `[B, H, T, d/H]`.
    fn heads(&mut self, x: Var) -> Result<Var> {
        let s = self.g.shape(x).to_vec();
        let h = self.params.config().num_heads;
        let x = self.g.reshape(x, &[s[0], s[1], h, s[2] / h])?;
        self.g.permute(x, &[0, 2, 1, 3])
    }

    /// Multi-head attention; `blocked` is `[B, H, Tq, Tk]` from
    /// [`AttentionMask::blocked_per_head`].
    fn attention(&mut self, prefix: &str, xq: Var, xkv: Var, blocked: &[bool]) -> Result<Var> {
        let cfg = self.params.config();
        let (d, dh) = (cfg.model_dim, cfg.head_dim());
        let q = self.linear(xq, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
        let k = self.linear(xkv, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
        let v = self.linear(xkv, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
        let q = self.heads(q)?;
        let k = self.heads(k)?;
        let v = self.heads(v)?;
        let kt = self.g.transpose(k)?;
        let scores = self.g.matmul(q, kt)?;
        let scores = self.g.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = self.g.masked_fill(scores, blocked, MASK_FILL)?;
        let weights = self.g.softmax(scores);
        let ctx = self.g.matmul(weights, v)?;
        let ctx = self.g.permute(ctx, &[0, 2, 1, 3])?;
        let s = self.g.shape(ctx).to_vec();
        let ctx = self.g.reshape(ctx, &[s[0], s[1], d])?;
        self.linear(ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }

    fn ffn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
        let h = self.g.relu(h);
        self.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    /// `norm(x + dropout(sublayer))`.
    fn residual(&mut self, x: Var, sub: Var, norm: &str) -> Result<Var> {
        let sub = self.dropout(sub)?;
        let y = self.g.add(x, sub)?;
        self.norm(y, norm)
    }

    fn check_tokens(&self, batch: &Padded) -> Result<()> {
        let vocab = self.params.config().vocab_size;
        if let Some(&id) = batch.ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id, vocab });
        }
        if batch.lens.contains(&0) || batch.batch() == 0 {
            return Err(Error::Empty("token sequence"));
        }
        Ok(())
    }

    /// Scaled token embeddings plus sinusoidal positions, `[B, T, d]`.
    fn embed(&mut self, batch: &Padded) -> Result<Var> {
        self.check_tokens(batch)?;
        let d = self.params.config().model_dim;
        let table = self.param(EMBED);
        let e = self.g.gather(table, &batch.ids)?;
        let e = self.g.reshape(e, &[batch.batch(), batch.width, d])?;
        let e = self.g.scale(e, (d as f64).sqrt());
        let pe = self.g.constant(sinusoidal(batch.width, d));
        let e = self.g.add(e, pe)?;
        self.dropout(e)
    }

    /// Encoder states `[B, Ts, d]`.
    pub fn encoder(&mut self, src: &Padded) -> Result<Var> {
        let cfg = self.params.config();
        if src.width > cfg.max_len {
            return Err(Error::TooLong {
                len: src.width,
                max_len: cfg.max_len,
            });
        }
        let (layers, heads) = (cfg.num_layers, cfg.num_heads);
        let mut x = self.embed(src)?;
        let blocked = AttentionMask::padding(&src.lens, src.width, src.width).blocked_per_head(heads);
        for l in 0..layers {
            let p = format!("encoder.layer{l}");
            let a = self.attention(&format!("{p}.self_attn"), x, x, &blocked)?;
            x = self.residual(x, a, &format!("{p}.self_attn_norm"))?;
            let f = self.ffn(&format!("{p}.ffn"), x)?;
            x = self.residual(x, f, &format!("{p}.ffn_norm"))?;
        }
        Ok(x)
    }

    fn decoder_stack(&mut self, mut x: Var, enc: Var, self_mask: &AttentionMask, src_lens: &[usize], nar: bool) -> Result<Var> {
        let cfg = self.params.config().clone();
        let (batch, tq, _) = self_mask.dims();
        let tk = self.g.shape(enc)[1];
        let self_blocked = self_mask.blocked_per_head(cfg.num_heads);
        let cross_blocked = AttentionMask::padding(src_lens, tq, tk).blocked_per_head(cfg.num_heads);
        debug_assert_eq!(batch, src_lens.len());
        for l in 0..cfg.num_layers {
            let p = format!("decoder.layer{l}");
            if nar {
                let table = self.param(&layer_positions_name(&cfg, l));
                let rows: Vec<usize> = (0..tq).collect();
                let pos = self.g.gather(table, &rows)?;
                x = self.g.add(x, pos)?;
            }
            let a = self.attention(&format!("{p}.self_attn"), x, x, &self_blocked)?;
            x = self.residual(x, a, &format!("{p}.self_attn_norm"))?;
            let c = self.attention(&format!("{p}.cross_attn"), x, enc, &cross_blocked)?;
            x = self.residual(x, c, &format!("{p}.cross_attn_norm"))?;
            let f = self.ffn(&format!("{p}.ffn"), x)?;
            x = self.residual(x, f, &format!("{p}.ffn_norm"))?;
        }
        Ok(x)
    }

    /// Vocabulary logits `[B, T, V]` from decoder states.
    fn output_logits(&mut self, h: Var) -> Result<Var> {
        if self.params.config().tie_embeddings {
            let table = self.param(EMBED);
            let proj = self.g.transpose(table)?;
            self.g.matmul(h, proj)
        } else {
            let proj = self.param(OUTPUT_PROJ);
            self.g.matmul(h, proj)
        }
    }

    /// Teacher-forced decoder logits `[B, Tt, V]`; `dec_in` starts with BOS.
    pub fn ar_logits(&mut self, enc: Var, src_lens: &[usize], dec_in: &Padded) -> Result<Var> {
        let max_len = self.params.config().max_len;
        if dec_in.width > max_len {
            return Err(Error::TooLong {
                len: dec_in.width,
                max_len,
            });
        }
        let x = self.embed(dec_in)?;
        let mask = AttentionMask::causal(&dec_in.lens, dec_in.width);
        let h = self.decoder_stack(x, enc, &mask, src_lens, false)?;
        self.output_logits(h)
    }

    /// Parallel decoder logits `[B, max(tgt_lens), V]`.
    pub fn nar_logits(&mut self, enc: Var, src_lens: &[usize], tgt_lens: &[usize]) -> Result<Var> {
        let cfg = self.params.config().clone();
        let width = tgt_lens.iter().copied().max().unwrap_or(0);
        if width == 0 || tgt_lens.contains(&0) {
            return Err(Error::invalid("target length must be at least 1"));
        }
        if width > cfg.max_len {
            return Err(Error::TooLong {
                len: width,
                max_len: cfg.max_len,
            });
        }
        let log_sigma_sq = self.param(LOG_SIGMA_SQ);
        let x = soft_copy_graph(&mut self.g, enc, log_sigma_sq, src_lens, tgt_lens, cfg.kernel_normalize)?;
        self.nar_decoder(x, enc, src_lens, tgt_lens)
    }

    /// Parallel decoder on explicit inputs `x: [B, max(tgt_lens), d]`.
    pub fn nar_decoder(&mut self, x: Var, enc: Var, src_lens: &[usize], tgt_lens: &[usize]) -> Result<Var> {
        let width = self.g.shape(x)[1];
        let mask = AttentionMask::non_causal(tgt_lens, width);
        let h = self.decoder_stack(x, enc, &mask, src_lens, true)?;
        self.output_logits(h)
    }
}
