//! Tape of primitive operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. Leaves may
//! borrow their value (model parameters) to avoid copying weights into every
//! step's tape.

use std::borrow::Cow;

use super::kernels::{gemm, log_softmax_rows, permute, softmax_rows};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        shared_rhs: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    AddScalar {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Log {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    LogSoftmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    SumLast {
        x: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedFill {
        x: Var,
        mask: Vec<bool>,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// How the right operand of an elementwise op lines up with the left.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `b` matches the trailing axes of `a` and repeats over the leading ones.
    Suffix,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.iter().product::<usize>() == 1 {
        Ok(Broadcast::Scalar)
    } else if b.len() < a.len() && a.ends_with(b) {
        Ok(Broadcast::Suffix)
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Recorded computation. Values are computed eagerly as ops are added.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Tensor>>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Owned leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Borrowed leaf; `trainable` decides whether it receives a gradient.
    pub fn leaf_ref(&mut self, value: &'p Tensor, trainable: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, trainable)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` is
    /// a trainable leaf reachable from that loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    // ---------------------------------------------------------------- ops

    /// `a: [.., m, k]` times `b: [k, n]` (shared across the leading axes of
    /// `a`) or `b: [.., k, n]` with the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sb[..sb.len() - 2] != *lead {
            return Err(mismatch());
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if shared_rhs {
                gemm(batch * m, k, n, av, false, bv, false, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        false,
                        &bv[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(
            value,
            Op::MatMul {
                a,
                b,
                shared_rhs,
                batch,
                m,
                k,
                n,
            },
            &[a, b],
        ))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!(
                "permutation {perm:?} invalid for shape {shape:?}"
            )));
        }
        let (out_shape, out) = permute(self.value(x).data(), &shape, perm);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push_op(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::invalid(format!("transpose of rank-{rank} tensor")));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape { x }, &[x]))
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = match op {
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            _ => "div",
        };
        let kind = broadcast_kind(name, self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let out: Vec<f64> = match kind {
            Broadcast::Same => av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => av.data().iter().map(|&x| f(x, bv[0])).collect(),
            Broadcast::Suffix => av
                .data()
                .chunks_exact(bv.len())
                .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| f(x, y)))
                .collect(),
        };
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push_op(value, op, &[a, b]))
    }

    /// Elementwise sum; `b` may be a scalar or match the trailing axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add { a, b }, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub { a, b }, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul { a, b }, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Div { a, b }, a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push_op(value, Op::Scale { x, c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push_op(value, Op::AddScalar { x }, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push_op(value, Op::Exp { x }, &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push_op(value, Op::Log { x }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push_op(value, Op::Tanh { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push_op(value, Op::Relu { x }, &[x])
    }

    fn last_dim(&self, x: Var) -> usize {
        *self.shape(x).last().unwrap_or(&1)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = self.last_dim(x);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.numel()];
        softmax_rows(xv.data(), n, &mut out);
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push_op(value, Op::Softmax { x }, &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let n = self.last_dim(x);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.numel()];
        log_softmax_rows(xv.data(), n, &mut out);
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push_op(value, Op::LogSoftmax { x }, &[x])
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// variance (biased estimator). No affine transform.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let n = self.last_dim(x);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.numel()];
        let mut inv_std = Vec::with_capacity(xv.numel() / n);
        for (xr, yr) in xv.data().chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (y, &v) in yr.iter_mut().zip(xr) {
                *y = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.push_op(value, Op::LayerNorm { x, inv_std }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push_op(value, Op::SumAll { x }, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.numel() as f64);
        self.push_op(value, Op::MeanAll { x }, &[x])
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let n = self.last_dim(x);
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().chunks_exact(n).map(|r| r.iter().sum()).collect();
        let shape = xv.shape()[..xv.rank().saturating_sub(1)].to_vec();
        let value = Tensor::new(shape, out).expect("reduced shape");
        self.push_op(value, Op::SumLast { x }, &[x])
    }

    /// Rows of a `[vocab, dim]` table selected by `ids`, giving `[ids.len(), dim]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid(format!("gather table must be 2-D, got {shape:?}")));
        }
        if ids.is_empty() {
            return Err(Error::Empty("gather ids"));
        }
        let (vocab, dim) = (shape[0], shape[1]);
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], out)?;
        Ok(self.push_op(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Sets every position where `mask` is true to `fill`. The filled
    /// positions pass no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::ShapeMismatch {
                op: "masked_fill",
                lhs: xv.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = xv
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push_op(
            value,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
            &[x],
        ))
    }

    // ----------------------------------------------------------- backward

    /// Populates gradients of the scalar `loss` for every trainable leaf it
    /// depends on. Replaces gradients from any earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(shape, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, dy, &mut grads);
        }
        // Keep gradients only on leaves.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, dy: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.as_ref();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                shared_rhs,
                batch,
                m,
                k,
                n,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let d = dy.data();
                if self.wants(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    if *shared_rhs {
                        gemm(batch * m, n, k, d, false, bv, true, &mut da, false);
                    } else {
                        for j in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &d[j * m * n..(j + 1) * m * n],
                                false,
                                &bv[j * k * n..(j + 1) * k * n],
                                true,
                                &mut da[j * m * k..(j + 1) * m * k],
                                false,
                            );
                        }
                    }
                    let shape = self.shape(*a).to_vec();
                    accumulate(grads, *a, Tensor::new(shape, da).expect("grad shape"));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; if *shared_rhs { k * n } else { batch * k * n }];
                    if *shared_rhs {
                        gemm(k, batch * m, n, av, true, d, false, &mut db, false);
                    } else {
                        for j in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[j * m * k..(j + 1) * m * k],
                                true,
                                &d[j * m * n..(j + 1) * m * n],
                                false,
                                &mut db[j * k * n..(j + 1) * k * n],
                                false,
                            );
                        }
                    }
                    let shape = self.shape(*b).to_vec();
                    accumulate(grads, *b, Tensor::new(shape, db).expect("grad shape"));
                }
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (shape, data) = permute(dy.data(), dy.shape(), &inverse);
                accumulate(grads, *x, Tensor::new(shape, data).expect("grad shape"));
            }
            Op::Reshape { x } => {
                let shape = self.shape(*x).to_vec();
                accumulate(grads, *x, dy.reshape(&shape).expect("grad shape"));
            }
            Op::Add { a, b } => {
                if self.wants(*b) {
                    let gb = reduce_to(&dy, self.shape(*b));
                    accumulate(grads, *b, gb);
                }
                if self.wants(*a) {
                    accumulate(grads, *a, dy);
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*b) {
                    let gb = reduce_to(&dy.map(|v| -v), self.shape(*b));
                    accumulate(grads, *b, gb);
                }
                if self.wants(*a) {
                    accumulate(grads, *a, dy);
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.wants(*a) {
                    let ga = zip_broadcast(&dy, bv, |g, y| g * y);
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let prod = Tensor::new(
                        dy.shape().to_vec(),
                        dy.data().iter().zip(av.data()).map(|(g, x)| g * x).collect(),
                    )
                    .expect("same shape");
                    accumulate(grads, *b, reduce_to(&prod, bv.shape()));
                }
            }
            Op::Div { a, b } => {
                let bv = self.value(*b);
                if self.wants(*a) {
                    let ga = zip_broadcast(&dy, bv, |g, y| g / y);
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    // d(a/b)/db = -(a/b)/b = -y/b
                    let t = zip_broadcast(&dy, bv, |g, yb| g / yb);
                    let prod = Tensor::new(
                        t.shape().to_vec(),
                        t.data().iter().zip(y.data()).map(|(g, q)| -g * q).collect(),
                    )
                    .expect("same shape");
                    accumulate(grads, *b, reduce_to(&prod, bv.shape()));
                }
            }
            Op::Scale { x, c } => accumulate(grads, *x, dy.map(|g| g * c)),
            Op::AddScalar { x } => accumulate(grads, *x, dy),
            Op::Exp { x } => accumulate(grads, *x, elementwise(&dy, y.data(), |g, e| g * e)),
            Op::Log { x } => {
                let xv = self.value(*x).data();
                accumulate(grads, *x, elementwise(&dy, xv, |g, v| g / v));
            }
            Op::Tanh { x } => accumulate(grads, *x, elementwise(&dy, y.data(), |g, t| g * (1.0 - t * t))),
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                accumulate(grads, *x, elementwise(&dy, xv, |g, v| if v > 0.0 { g } else { 0.0 }));
            }
            Op::Softmax { x } => {
                let n = *y.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks_exact(n)
                    .zip(dy.data().chunks_exact(n))
                    .zip(dx.chunks_exact_mut(n))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for ((d, &p), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = p * (g - dot);
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx).expect("same shape"));
            }
            Op::LogSoftmax { x } => {
                let n = *y.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks_exact(n)
                    .zip(dy.data().chunks_exact(n))
                    .zip(dx.chunks_exact_mut(n))
                {
                    let total: f64 = gr.iter().sum();
                    for ((d, &lp), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = g - lp.exp() * total;
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx).expect("same shape"));
            }
            Op::LayerNorm { x, inv_std } => {
                let n = *y.shape().last().unwrap_or(&1);
                let nf = n as f64;
                let mut dx = vec![0.0; y.numel()];
                for (((yr, gr), dr), is) in y
                    .data()
                    .chunks_exact(n)
                    .zip(dy.data().chunks_exact(n))
                    .zip(dx.chunks_exact_mut(n))
                    .zip(inv_std)
                {
                    let mean_g = gr.iter().sum::<f64>() / nf;
                    let mean_gy = gr.iter().zip(yr).map(|(g, v)| g * v).sum::<f64>() / nf;
                    for ((d, &g), &v) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = is * (g - mean_g - v * mean_gy);
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx).expect("same shape"));
            }
            Op::SumAll { x } => {
                let g = dy.item();
                accumulate(grads, *x, Tensor::full(self.shape(*x), g));
            }
            Op::MeanAll { x } => {
                let xs = self.shape(*x);
                let g = dy.item() / xs.iter().product::<usize>() as f64;
                accumulate(grads, *x, Tensor::full(xs, g));
            }
            Op::SumLast { x } => {
                let xs = self.shape(*x).to_vec();
                let n = *xs.last().unwrap_or(&1);
                let data = dy.data().iter().flat_map(|&g| std::iter::repeat_n(g, n)).collect();
                accumulate(grads, *x, Tensor::new(xs, data).expect("shape"));
            }
            Op::Gather { table, ids } => {
                let ts = self.shape(*table).to_vec();
                let dim = ts[1];
                let mut dt = vec![0.0; ts[0] * dim];
                for (row, &id) in dy.data().chunks_exact(dim).zip(ids) {
                    for (d, g) in dt[id * dim..(id + 1) * dim].iter_mut().zip(row) {
                        *d += g;
                    }
                }
                accumulate(grads, *table, Tensor::new(ts, dt).expect("shape"));
            }
            Op::MaskedFill { x, mask } => {
                let data = dy
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { 0.0 } else { g })
                    .collect();
                accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), data).expect("shape"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(dy: &Tensor, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = dy.data().iter().zip(other).map(|(&g, &o)| f(g, o)).collect();
    Tensor::new(dy.shape().to_vec(), data).expect("same shape")
}

/// Applies `f(dy, b)` with `b` broadcast against `dy` the same way the
/// forward op broadcast it.
fn zip_broadcast(dy: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let bd = b.data();
    let data: Vec<f64> = if b.numel() == dy.numel() {
        dy.data().iter().zip(bd).map(|(&g, &y)| f(g, y)).collect()
    } else if b.numel() == 1 {
        dy.data().iter().map(|&g| f(g, bd[0])).collect()
    } else {
        dy.data()
            .chunks_exact(bd.len())
            .flat_map(|row| row.iter().zip(bd).map(|(&g, &y)| f(g, y)).collect::<Vec<_>>())
            .collect()
    };
    Tensor::new(dy.shape().to_vec(), data).expect("same shape")
}

/// Sums a full-size gradient down to the (broadcast) operand shape.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    if n == g.numel() {
        return g.clone().reshape(shape).expect("same size");
    }
    let mut out = vec![0.0; n];
    for row in g.data().chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("reduced shape")
}
