//! Label-smoothed cross-entropy.
//!
//! The smoothed target puts `1 - ε` on the reference token and spreads `ε`
//! evenly over the other `V - 1` entries. Positions whose reference is the
//! padding id are skipped; the loss is the mean over the remaining positions.

use crate::data::vocab::PAD;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Loss of per-position distributions `pred: [T, V]` against `target`.
pub fn smoothed_ce_loss(pred: &Tensor, target: &[usize], epsilon: f64) -> Result<f64> {
    if pred.rank() != 2 || pred.shape()[0] != target.len() {
        return Err(Error::ShapeMismatch {
            op: "smoothed_ce_loss",
            lhs: pred.shape().to_vec(),
            rhs: vec![target.len()],
        });
    }
    let v = pred.shape()[1];
    let off = if v > 1 { epsilon / (v - 1) as f64 } else { 0.0 };
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, &y) in target.iter().enumerate() {
        if y == PAD {
            continue;
        }
        if y >= v {
            return Err(Error::TokenOutOfRange { id: y, vocab: v });
        }
        let row = pred.row(t);
        let mut l = 0.0;
        for (k, &p) in row.iter().enumerate() {
            let q = if k == y { 1.0 - epsilon } else { off };
            if q > 0.0 {
                l -= q * p.ln();
            }
        }
        total += l;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("non-padding target positions"));
    }
    Ok(total / count as f64)
}

/// Smoothed target distribution `[B, W, V]` for padded targets (rows at
/// padding positions are all zero) and the number of scored positions.
pub fn smoothed_targets(targets: &[usize], batch: usize, width: usize, vocab: usize, epsilon: f64) -> (Tensor, usize) {
    let off = if vocab > 1 { epsilon / (vocab - 1) as f64 } else { 0.0 };
    let mut q = vec![0.0; batch * width * vocab];
    let mut count = 0;
    for (pos, &y) in targets.iter().enumerate() {
        if y == PAD {
            continue;
        }
        let row = &mut q[pos * vocab..(pos + 1) * vocab];
        row.iter_mut().for_each(|v| *v = off);
        row[y] = 1.0 - epsilon;
        count += 1;
    }
    (Tensor::new(vec![batch, width, vocab], q).expect("positive dims"), count)
}

/// Mean smoothed cross-entropy of `logits: [B, W, V]` against padded
/// `targets` (row-major `[B, W]`, PAD where ignored). Returns the loss node
/// and the number of scored positions.
pub fn smoothed_ce_graph(g: &mut Graph<'_>, logits: Var, targets: &[usize], epsilon: f64) -> Result<(Var, usize)> {
    let s = g.shape(logits).to_vec();
    if s.len() != 3 || s[0] * s[1] != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "smoothed_ce_graph",
            lhs: s,
            rhs: vec![targets.len()],
        });
    }
    if let Some(&y) = targets.iter().find(|&&y| y >= s[2]) {
        return Err(Error::TokenOutOfRange { id: y, vocab: s[2] });
    }
    let (q, count) = smoothed_targets(targets, s[0], s[1], s[2], epsilon);
    if count == 0 {
        return Err(Error::Empty("non-padding target positions"));
    }
    let lp = g.log_softmax(logits);
    let q = g.constant(q);
    let weighted = g.mul(lp, q)?;
    let total = g.sum_all(weighted);
    Ok((g.scale(total, -1.0 / count as f64), count))
}
