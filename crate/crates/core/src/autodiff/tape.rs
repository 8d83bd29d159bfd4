//! Define-by-run reverse-mode tape.
//!
//! Every forward op appends a node holding its output value and whatever
//! context its backward rule needs (argmax positions, dropout masks,
//! normalized activations). Nodes only reference earlier nodes, so the node
//! vector is already in topological order and [`Tape::backward`] is a single
//! reverse sweep.

use std::fmt;
use std::str::FromStr;

use super::kernels::{self, ConvDims};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// A node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Embedding,
    Conv1d,
    OneHotConv1d,
    Relu,
    GlobalMaxPool,
    LocalMaxPool,
    GlobalAvgPool,
    Linear,
    Dropout,
    BatchNorm,
    ResidualAdd,
    DenseConcat,
    Flatten,
    SoftmaxCrossEntropy,
    Mul,
    Sum,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Embedding,
        OpKind::Conv1d,
        OpKind::OneHotConv1d,
        OpKind::Relu,
        OpKind::GlobalMaxPool,
        OpKind::LocalMaxPool,
        OpKind::GlobalAvgPool,
        OpKind::Linear,
        OpKind::Dropout,
        OpKind::BatchNorm,
        OpKind::ResidualAdd,
        OpKind::DenseConcat,
        OpKind::Flatten,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Mul,
        OpKind::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Embedding => "embedding",
            OpKind::Conv1d => "conv1d",
            OpKind::OneHotConv1d => "onehot_conv1d",
            OpKind::Relu => "relu",
            OpKind::GlobalMaxPool => "global_max_pool",
            OpKind::LocalMaxPool => "local_max_pool",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Linear => "linear",
            OpKind::Dropout => "dropout",
            OpKind::BatchNorm => "batch_norm",
            OpKind::ResidualAdd => "residual_add",
            OpKind::DenseConcat => "dense_concat",
            OpKind::Flatten => "flatten",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Mul => "mul",
            OpKind::Sum => "sum",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown op '{s}'")))
    }
}

/// Per-channel batch statistics from a train-mode batch norm, for the caller's
/// running averages. `var` is the unbiased estimate.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub enum BnMode<'a, T> {
    Train,
    Eval {
        mean: &'a Tensor<T>,
        var: &'a Tensor<T>,
    },
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Embedding {
        table: Var,
        indices: Vec<usize>,
        len: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    OneHotConv1d {
        indices: Vec<usize>,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    Relu {
        x: Var,
    },
    /// Max pools record, per output element, the flat offset of the input
    /// element that produced it.
    MaxPool {
        kind: OpKind,
        x: Var,
        arg: Vec<usize>,
    },
    GlobalAvg {
        x: Var,
        len: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
        f_in: usize,
        f_out: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf | Op::Param(_) => return None,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::OneHotConv1d { .. } => OpKind::OneHotConv1d,
            Op::Relu { .. } => OpKind::Relu,
            Op::MaxPool { kind, .. } => *kind,
            Op::GlobalAvg { .. } => OpKind::GlobalAvgPool,
            Op::Linear { .. } => OpKind::Linear,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Add { .. } => OpKind::ResidualAdd,
            Op::Concat { .. } => OpKind::DenseConcat,
            Op::Reshape { .. } => OpKind::Flatten,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Mul { .. } => OpKind::Mul,
            Op::Sum { .. } => OpKind::Sum,
        })
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of every node that required one, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
    kinks: Option<u64>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(FNV_PRIME)
}

fn expect_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
            kinks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts the backward rule of `kind` (scales its input gradients by
    /// 1.5). Test hook for gradient-check negative controls.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    /// Starts hashing the discrete choices made during forward (ReLU signs,
    /// max-pool argmax positions), so perturbations that cross a kink can be
    /// detected via [`Tape::kink_signature`].
    pub fn track_kinks(&mut self) {
        self.kinks = Some(0xcbf2_9ce4_8422_2325);
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf bound to a stored parameter. Its gradient is accumulated into
    /// the store by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// Columns of a `(d, vocab)` table gathered into `(batch, d, len)`.
    pub fn embedding(
        &mut self,
        indices: &[usize],
        batch: usize,
        len: usize,
        table: Var,
    ) -> Result<Var> {
        let t = self.value(table);
        expect_rank("embedding", t, 2)?;
        if indices.len() != batch * len {
            return Err(Error::shape(
                "embedding",
                format!("{} indices for batch {batch} x len {len}", indices.len()),
            ));
        }
        let (d, vocab) = (t.dim(0), t.dim(1));
        if let Some(pos) = indices.iter().position(|&i| i >= vocab) {
            return Err(Error::IndexOutOfRange {
                what: "embedding",
                position: pos,
                index: indices[pos],
                bound: vocab,
            });
        }
        let td = t.data();
        let mut out = Vec::with_capacity(batch * d * len);
        for b in 0..batch {
            let ib = &indices[b * len..(b + 1) * len];
            for k in 0..d {
                let row = &td[k * vocab..(k + 1) * vocab];
                out.extend(ib.iter().map(|&i| row[i]));
            }
        }
        let value = Tensor::from_vec(&[batch, d, len], out)?;
        let needs = self.needs(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
                len,
            },
            needs,
        ))
    }

    /// Affine temporal convolution, stride 1, `pad` zeros on both sides.
    /// Output length is `n + 2·pad − h + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank("conv1d", xt, 3)?;
        expect_rank("conv1d", wt, 3)?;
        if wt.dim(1) != xt.dim(1) || bt.shape() != [wt.dim(0)] {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    xt.shape(),
                    wt.shape(),
                    bt.shape()
                ),
            ));
        }
        let dims = ConvDims {
            batch: xt.dim(0),
            c_in: xt.dim(1),
            c_out: wt.dim(0),
            len: xt.dim(2),
            window: wt.dim(2),
            pad,
        };
        let out_len = dims.out_len().ok_or_else(|| {
            Error::shape(
                "conv1d",
                format!(
                    "sequence length {} (padding {pad}) shorter than kernel {}",
                    dims.len, dims.window
                ),
            )
        })?;
        let out = kernels::conv1d_forward(xt.data(), wt.data(), bt.data(), dims);
        let value = Tensor::from_vec(&[dims.batch, dims.c_out, out_len], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Conv1d { x, w, b, dims }, needs))
    }

    /// [`Tape::conv1d`] over a one-hot input given as indices `(batch, len)`
    /// into `w.dim(1)` channels; out-of-range indices are all-zero columns.
    pub fn onehot_conv1d(
        &mut self,
        indices: &[usize],
        batch: usize,
        len: usize,
        w: Var,
        b: Var,
        pad: usize,
    ) -> Result<Var> {
        let (wt, bt) = (self.value(w), self.value(b));
        expect_rank("onehot_conv1d", wt, 3)?;
        if bt.shape() != [wt.dim(0)] || indices.len() != batch * len {
            return Err(Error::shape(
                "onehot_conv1d",
                format!(
                    "weight {:?}, bias {:?}, {} indices for {batch}x{len}",
                    wt.shape(),
                    bt.shape(),
                    indices.len()
                ),
            ));
        }
        let dims = ConvDims {
            batch,
            c_in: wt.dim(1),
            c_out: wt.dim(0),
            len,
            window: wt.dim(2),
            pad,
        };
        let out_len = dims.out_len().ok_or_else(|| {
            Error::shape(
                "onehot_conv1d",
                format!(
                    "sequence length {len} (padding {pad}) shorter than kernel {}",
                    dims.window
                ),
            )
        })?;
        let out = kernels::onehot_conv1d_forward(indices, wt.data(), bt.data(), dims);
        let value = Tensor::from_vec(&[batch, dims.c_out, out_len], out)?;
        let needs = self.needs(w) || self.needs(b);
        Ok(self.push(
            value,
            Op::OneHotConv1d {
                indices: indices.to_vec(),
                w,
                b,
                dims,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let value = xt.map(|v| if v > T::zero() { v } else { T::zero() });
        if let Some(h) = self.kinks {
            self.kinks = Some(
                xt.data()
                    .iter()
                    .fold(h, |h, &v| mix(h, (v > T::zero()) as u64)),
            );
        }
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    fn record_argmax(&mut self, arg: &[usize]) {
        if let Some(h) = self.kinks {
            self.kinks = Some(arg.iter().fold(h, |h, &a| mix(h, a as u64)));
        }
    }

    /// `(batch, C, L) -> (batch, C)`, max over time, first maximum on ties.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        expect_rank("global_max_pool", xt, 3)?;
        let (batch, c, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let (values, idx) = xt.reduce_max(2)?;
        let arg: Vec<usize> = idx
            .iter()
            .enumerate()
            .map(|(row, &j)| row * len + j)
            .collect();
        let value = values.reshape(&[batch, c])?;
        self.record_argmax(&arg);
        let needs = self.needs(x);
        Ok(self.push(
            value,
            Op::MaxPool {
                kind: OpKind::GlobalMaxPool,
                x,
                arg,
            },
            needs,
        ))
    }

    /// Windowed max with kernel = stride = `k`; the last window may be partial,
    /// so the output length is `ceil(n / k)`.
    pub fn local_max_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        if k < 1 {
            return Err(Error::invalid("local_max_pool kernel must be >= 1"));
        }
        let xt = self.value(x);
        expect_rank("local_max_pool", xt, 3)?;
        let (batch, c, n) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let out_len = n.div_ceil(k);
        let xd = xt.data();
        let mut out = Vec::with_capacity(batch * c * out_len);
        let mut arg = Vec::with_capacity(batch * c * out_len);
        for row in 0..batch * c {
            let base = row * n;
            for j in 0..out_len {
                let lo = base + j * k;
                let hi = base + ((j + 1) * k).min(n);
                let mut best = lo;
                for i in lo + 1..hi {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
        let value = Tensor::from_vec(&[batch, c, out_len], out)?;
        self.record_argmax(&arg);
        let needs = self.needs(x);
        Ok(self.push(
            value,
            Op::MaxPool {
                kind: OpKind::LocalMaxPool,
                x,
                arg,
            },
            needs,
        ))
    }

    /// `(batch, C, L) -> (batch, C)`, mean over time.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        expect_rank("global_avg_pool", xt, 3)?;
        let (batch, c, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let scale = T::one() / T::of(len as f64);
        let out: Vec<T> = xt
            .data()
            .chunks(len)
            .map(|row| row.iter().copied().sum::<T>() * scale)
            .collect();
        let value = Tensor::from_vec(&[batch, c], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::GlobalAvg { x, len }, needs))
    }

    /// `x (batch, F_in)`, `w (F_out, F_in)`, `b (F_out)` to `x·wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank("linear", xt, 2)?;
        expect_rank("linear", wt, 2)?;
        if wt.dim(1) != xt.dim(1) || bt.shape() != [wt.dim(0)] {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    xt.shape(),
                    wt.shape(),
                    bt.shape()
                ),
            ));
        }
        let (batch, f_in, f_out) = (xt.dim(0), xt.dim(1), wt.dim(0));
        let out = kernels::linear_forward(xt.data(), wt.data(), bt.data(), batch, f_in, f_out);
        let value = Tensor::from_vec(&[batch, f_out], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            value,
            Op::Linear {
                x,
                w,
                b,
                batch,
                f_in,
                f_out,
            },
            needs,
        ))
    }

    /// Inverted dropout. Eval mode and `p == 0` return `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let xt = self.value(x);
        let mask: Vec<T> = (0..xt.numel())
            .map(|_| if rng.unit() < p { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = xt.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(xt.shape(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, needs))
    }

    /// Per-channel normalization of `(batch, C, L)`. Train mode normalizes with
    /// the batch statistics and returns them; eval mode uses the given running
    /// statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let (xt, st, ht) = (self.value(x), self.value(scale), self.value(shift));
        expect_rank("batch_norm", xt, 3)?;
        let (batch, c, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        if st.shape() != [c] || ht.shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "input {:?}, scale {:?}, shift {:?}",
                    xt.shape(),
                    st.shape(),
                    ht.shape()
                ),
            ));
        }
        let count = batch * len;
        let eps = T::of(eps);
        let xd = xt.data();
        let (mean, var_biased, stats) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::invalid(format!(
                        "train-mode batch norm needs >= 2 values per channel, got {count}"
                    )));
                }
                let n = T::of(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..batch {
                        s += xd[(b * c + ch) * len..(b * c + ch + 1) * len]
                            .iter()
                            .copied()
                            .sum::<T>();
                    }
                    let m = s / n;
                    let mut q = T::zero();
                    for b in 0..batch {
                        for &v in &xd[(b * c + ch) * len..(b * c + ch + 1) * len] {
                            q += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = q / n;
                }
                let unbiased = T::of(count as f64 / (count - 1) as f64);
                let stats = BnStats {
                    mean: mean.clone(),
                    var: var.iter().map(|&v| v * unbiased).collect(),
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.shape() != [c] || var.shape() != [c] {
                    return Err(Error::shape("batch_norm", "running statistics shape"));
                }
                (mean.data().to_vec(), var.data().to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_biased
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let (sd, hd) = (st.data(), ht.data());
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for b in 0..batch {
            for ch in 0..c {
                for &v in &xd[(b * c + ch) * len..(b * c + ch + 1) * len] {
                    let z = (v - mean[ch]) * inv_std[ch];
                    xhat.push(z);
                    out.push(sd[ch] * z + hd[ch]);
                }
            }
        }
        let value = Tensor::from_vec(xt.shape(), out)?;
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        let batch_stats = stats.is_some();
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        );
        Ok((v, stats))
    }

    /// Elementwise `x + fx` (identity skip connection).
    pub fn residual_add(&mut self, x: Var, fx: Var) -> Result<Var> {
        let value = self
            .value(x)
            .zip_map(self.value(fx), "residual_add", |a, b| a + b)?;
        let needs = self.needs(x) || self.needs(fx);
        Ok(self.push(value, Op::Add { a: x, b: fx }, needs))
    }

    /// Channel-axis concatenation of `(batch, C_i, L)` maps in the given order.
    pub fn dense_concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("dense_concat", "no inputs"));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let first = self.value(parts[0]);
        expect_rank("dense_concat", first, 3)?;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 3 || t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) {
                return Err(Error::shape(
                    "dense_concat",
                    format!(
                        "{:?} vs {:?}: batch and length must agree",
                        first.shape(),
                        t.shape()
                    ),
                ));
            }
        }
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&refs, 1)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// `(batch, ...) -> (batch, rest)`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let batch = xt.dim(0);
        let value = xt.reshape(&[batch, xt.numel() / batch])?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, needs))
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(value, Op::Sum { x }, needs)
    }

    /// Mean cross-entropy of softmax probabilities against `labels`.
    /// Returns the scalar loss node and the `(batch, K)` probabilities.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor<T>)> {
        let lt = self.value(logits);
        expect_rank("softmax_cross_entropy", lt, 2)?;
        let (batch, k) = (lt.dim(0), lt.dim(1));
        if labels.len() != batch {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for batch {batch}", labels.len()),
            ));
        }
        if let Some(pos) = labels.iter().position(|&l| l >= k) {
            return Err(Error::IndexOutOfRange {
                what: "label",
                position: pos,
                index: labels[pos],
                bound: k,
            });
        }
        lt.check_finite("logits")?;
        let (probs, lse) = kernels::softmax_rows(lt.data(), batch, k);
        let ld = lt.data();
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(b, &l)| lse[b] - ld[b * k + l])
            .sum();
        let loss = total / T::of(batch as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let probs_t = Tensor::from_vec(&[batch, k], probs.clone())?;
        let needs = self.needs(logits);
        let v = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        );
        Ok((v, probs_t))
    }

    /// Reverse sweep from the scalar `loss`. Parameter gradients are added
    /// into `store`; all node gradients are also returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() || self.value(loss).numel() != 1 {
            return Err(Error::NoForward);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut out: Vec<(Var, Vec<T>)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    store.accumulate(*id, &g);
                }
                Op::Embedding {
                    table,
                    indices,
                    len,
                } => {
                    if self.needs(*table) {
                        let tt = self.value(*table);
                        let (d, vocab) = (tt.dim(0), tt.dim(1));
                        let mut dt = vec![T::zero(); d * vocab];
                        let batch = indices.len() / len;
                        for b in 0..batch {
                            for k in 0..d {
                                let gb = &g[(b * d + k) * len..(b * d + k + 1) * len];
                                for (t, &gv) in gb.iter().enumerate() {
                                    dt[k * vocab + indices[b * len + t]] += gv;
                                }
                            }
                        }
                        out.push((*table, dt));
                    }
                }
                Op::Conv1d { x, w, b, dims } => {
                    let (dx, dw, db) = kernels::conv1d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &g,
                        *dims,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        out.push((*x, dx));
                    }
                    out.push((*w, dw));
                    out.push((*b, db));
                }
                Op::OneHotConv1d {
                    indices,
                    w,
                    b,
                    dims,
                } => {
                    let (dw, db) = kernels::onehot_conv1d_backward(indices, &g, *dims);
                    out.push((*w, dw));
                    out.push((*b, db));
                }
                Op::Relu { x } => {
                    let xd = self.value(*x).data();
                    let dx = g
                        .iter()
                        .zip(xd)
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    out.push((*x, dx));
                }
                Op::MaxPool { x, arg, .. } => {
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    for (&a, &gv) in arg.iter().zip(&g) {
                        dx[a] += gv;
                    }
                    out.push((*x, dx));
                }
                Op::GlobalAvg { x, len } => {
                    let scale = T::one() / T::of(*len as f64);
                    let dx = g
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv * scale, *len))
                        .collect();
                    out.push((*x, dx));
                }
                Op::Linear {
                    x,
                    w,
                    b,
                    batch,
                    f_in,
                    f_out,
                } => {
                    let (dx, dw, db) = kernels::linear_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &g,
                        *batch,
                        *f_in,
                        *f_out,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        out.push((*x, dx));
                    }
                    out.push((*w, dw));
                    out.push((*b, db));
                }
                Op::Dropout { x, mask } => {
                    out.push((*x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect()));
                }
                Op::BatchNorm {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let shape = self.value(*x).shape();
                    let (batch, c, len) = (shape[0], shape[1], shape[2]);
                    let sd = self.value(*scale).data();
                    let mut dscale = vec![T::zero(); c];
                    let mut dshift = vec![T::zero(); c];
                    for b in 0..batch {
                        for ch in 0..c {
                            let r = (b * c + ch) * len..(b * c + ch + 1) * len;
                            for (&gv, &z) in g[r.clone()].iter().zip(&xhat[r]) {
                                dshift[ch] += gv;
                                dscale[ch] += gv * z;
                            }
                        }
                    }
                    if self.needs(*x) {
                        let mut dx = vec![T::zero(); g.len()];
                        let n = T::of((batch * len) as f64);
                        for b in 0..batch {
                            for ch in 0..c {
                                let r = (b * c + ch) * len..(b * c + ch + 1) * len;
                                let k = sd[ch] * inv_std[ch];
                                for ((d, &gv), &z) in
                                    dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r])
                                {
                                    *d = if *batch_stats {
                                        k * (gv - dshift[ch] / n - z * dscale[ch] / n)
                                    } else {
                                        k * gv
                                    };
                                }
                            }
                        }
                        out.push((*x, dx));
                    }
                    out.push((*scale, dscale));
                    out.push((*shift, dshift));
                }
                Op::Add { a, b } => {
                    out.push((*a, g.clone()));
                    out.push((*b, g.clone()));
                }
                Op::Concat { parts } => {
                    let shape = node.value.shape();
                    let (batch, total, len) = (shape[0], shape[1], shape[2]);
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).dim(1);
                        if self.needs(p) {
                            let mut dp = Vec::with_capacity(batch * c * len);
                            for b in 0..batch {
                                let start = (b * total + offset) * len;
                                dp.extend_from_slice(&g[start..start + c * len]);
                            }
                            out.push((p, dp));
                        }
                        offset += c;
                    }
                }
                Op::Reshape { x } => out.push((*x, g.clone())),
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let k = probs.len() / labels.len();
                    let scale = g[0] / T::of(labels.len() as f64);
                    let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (b, &l) in labels.iter().enumerate() {
                        dl[b * k + l] -= scale;
                    }
                    out.push((*logits, dl));
                }
                Op::Mul { a, b } => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    out.push((*a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect()));
                    out.push((*b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect()));
                }
                Op::Sum { x } => {
                    let n = self.value(*x).numel();
                    out.push((*x, vec![g[0]; n]));
                }
            }
            let corrupt = self.fault.is_some() && node.op.kind() == self.fault;
            for (v, mut d) in out {
                if !self.needs(v) {
                    continue;
                }
                if corrupt {
                    d.iter_mut().for_each(|x| *x *= T::of(1.5));
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(d),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
