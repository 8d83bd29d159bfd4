//! Slice-level compute kernels behind the tape ops. Layouts are row-major:
//! sequences `(batch, channels, length)`, conv weights `(out, in, window)`.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub window: usize,
    pub pad: usize,
}

impl ConvDims {
    /// `len + 2·pad − window + 1`, or `None` when the window does not fit.
    pub fn out_len(&self) -> Option<usize> {
        (self.len + 2 * self.pad + 1)
            .checked_sub(self.window)
            .filter(|&l| l > 0)
    }

    /// Output positions `i` for which input position `i + j − pad` is in range.
    #[inline]
    fn span(&self, j: usize, out_len: usize) -> Option<(usize, usize)> {
        let lo = self.pad.saturating_sub(j);
        let hi = out_len.min((self.len + self.pad).saturating_sub(j));
        (lo < hi).then_some((lo, hi))
    }
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // four accumulators keep the loop vectorizable without reassociation
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for (l, s) in acc.iter_mut().enumerate() {
            *s += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut tail = T::zero();
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let out_len = d.out_len().expect("validated by caller");
    let k = d.c_in * d.window;
    let wt = transpose(w, d.c_out, k);
    let mut cols = vec![T::zero(); out_len * k];
    let mut ot = vec![T::zero(); out_len * d.c_out];
    let mut out = vec![T::zero(); d.batch * d.c_out * out_len];
    for b in 0..d.batch {
        im2col(
            &x[b * d.c_in * d.len..(b + 1) * d.c_in * d.len],
            &mut cols,
            d,
            out_len,
        );
        for row in ot.chunks_mut(d.c_out) {
            row.copy_from_slice(bias);
        }
        gemm_acc(out_len, d.c_out, k, &cols, &wt, &mut ot);
        transpose_into(
            &ot,
            out_len,
            d.c_out,
            &mut out[b * d.c_out * out_len..(b + 1) * d.c_out * out_len],
        );
    }
    out
}

pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad: &[T],
    d: ConvDims,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let out_len = d.out_len().expect("validated by caller");
    let k = d.c_in * d.window;
    let mut dwt = vec![T::zero(); k * d.c_out];
    let mut db = vec![T::zero(); d.c_out];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut cols = vec![T::zero(); out_len * k];
    let mut gt = vec![T::zero(); out_len * d.c_out];
    let mut dcols = vec![T::zero(); if need_dx { out_len * k } else { 0 }];
    for b in 0..d.batch {
        let g = &grad[b * d.c_out * out_len..(b + 1) * d.c_out * out_len];
        for (o, row) in g.chunks(out_len).enumerate() {
            db[o] += row.iter().copied().sum::<T>();
        }
        transpose_into(g, d.c_out, out_len, &mut gt);
        im2col(
            &x[b * d.c_in * d.len..(b + 1) * d.c_in * d.len],
            &mut cols,
            d,
            out_len,
        );
        // dWᵀ += colsᵀ · Gᵀ, one output position at a time
        for t in 0..out_len {
            let gr = &gt[t * d.c_out..(t + 1) * d.c_out];
            for (kk, &xv) in cols[t * k..(t + 1) * k].iter().enumerate() {
                if xv != T::zero() {
                    axpy(&mut dwt[kk * d.c_out..(kk + 1) * d.c_out], xv, gr);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            gemm_acc(out_len, k, d.c_out, &gt, w, &mut dcols);
            col2im(
                &dcols,
                &mut dx[b * d.c_in * d.len..(b + 1) * d.c_in * d.len],
                d,
                out_len,
            );
        }
    }
    (dx, transpose(&dwt, k, d.c_out), db)
}

/// `(out_len, c_in·window)` patch matrix of one sample; out-of-range taps are zero.
fn im2col<T: Scalar>(x: &[T], cols: &mut [T], d: ConvDims, out_len: usize) {
    let k = d.c_in * d.window;
    for t in 0..out_len {
        let row = &mut cols[t * k..(t + 1) * k];
        for c in 0..d.c_in {
            let xrow = &x[c * d.len..(c + 1) * d.len];
            for j in 0..d.window {
                let pos = (t + j).wrapping_sub(d.pad);
                row[c * d.window + j] = if pos < d.len { xrow[pos] } else { T::zero() };
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto one sample.
fn col2im<T: Scalar>(cols: &[T], dx: &mut [T], d: ConvDims, out_len: usize) {
    let k = d.c_in * d.window;
    for t in 0..out_len {
        let row = &cols[t * k..(t + 1) * k];
        for c in 0..d.c_in {
            for j in 0..d.window {
                let pos = (t + j).wrapping_sub(d.pad);
                if pos < d.len {
                    dx[c * d.len + pos] += row[c * d.window + j];
                }
            }
        }
    }
}

/// `c (m×n) += a (m×k) · b (k×n)`, row-major.
fn gemm_acc<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != T::zero() {
                axpy(ci, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

fn transpose_into<T: Scalar>(a: &[T], rows: usize, cols: usize, out: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}

fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    transpose_into(a, rows, cols, &mut out);
    out
}

/// Convolution over a one-hot input given by indices `(batch, len)`; indices
/// `>= d.c_in` are all-zero columns. Equivalent to [`conv1d_forward`] on the
/// materialized one-hot tensor at `1/c_in` of the cost.
pub fn onehot_conv1d_forward<T: Scalar>(idx: &[usize], w: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let out_len = d.out_len().expect("validated by caller");
    let mut out = vec![T::zero(); d.batch * d.c_out * out_len];
    for b in 0..d.batch {
        let ib = &idx[b * d.len..(b + 1) * d.len];
        for o in 0..d.c_out {
            let row = &mut out[(b * d.c_out + o) * out_len..(b * d.c_out + o + 1) * out_len];
            row.iter_mut().for_each(|v| *v = bias[o]);
            let wo = &w[o * d.c_in * d.window..(o + 1) * d.c_in * d.window];
            for j in 0..d.window {
                if let Some((lo, hi)) = d.span(j, out_len) {
                    let start = lo + j - d.pad;
                    for (r, &c) in row[lo..hi].iter_mut().zip(&ib[start..start + (hi - lo)]) {
                        if c < d.c_in {
                            *r += wo[c * d.window + j];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn onehot_conv1d_backward<T: Scalar>(
    idx: &[usize],
    grad: &[T],
    d: ConvDims,
) -> (Vec<T>, Vec<T>) {
    let out_len = d.out_len().expect("validated by caller");
    let mut dw = vec![T::zero(); d.c_out * d.c_in * d.window];
    let mut db = vec![T::zero(); d.c_out];
    for b in 0..d.batch {
        let ib = &idx[b * d.len..(b + 1) * d.len];
        for o in 0..d.c_out {
            let g = &grad[(b * d.c_out + o) * out_len..(b * d.c_out + o + 1) * out_len];
            db[o] += g.iter().copied().sum::<T>();
            let dwo = &mut dw[o * d.c_in * d.window..(o + 1) * d.c_in * d.window];
            for j in 0..d.window {
                if let Some((lo, hi)) = d.span(j, out_len) {
                    let start = lo + j - d.pad;
                    for (&gv, &c) in g[lo..hi].iter().zip(&ib[start..start + (hi - lo)]) {
                        if c < d.c_in {
                            dwo[c * d.window + j] += gv;
                        }
                    }
                }
            }
        }
    }
    (dw, db)
}

/// `out[b, f] = bias[f] + Σ_k w[f, k]·x[b, k]`.
pub fn linear_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    batch: usize,
    f_in: usize,
    f_out: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * f_out);
    for b in 0..batch {
        let xb = &x[b * f_in..(b + 1) * f_in];
        for f in 0..f_out {
            out.push(bias[f] + dot(&w[f * f_in..(f + 1) * f_in], xb));
        }
    }
    out
}

pub fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad: &[T],
    batch: usize,
    f_in: usize,
    f_out: usize,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); f_out * f_in];
    let mut db = vec![T::zero(); f_out];
    let mut dx = need_dx.then(|| vec![T::zero(); batch * f_in]);
    for b in 0..batch {
        let xb = &x[b * f_in..(b + 1) * f_in];
        for f in 0..f_out {
            let g = grad[b * f_out + f];
            if g == T::zero() {
                continue;
            }
            db[f] += g;
            axpy(&mut dw[f * f_in..(f + 1) * f_in], g, xb);
            if let Some(dx) = dx.as_mut() {
                axpy(
                    &mut dx[b * f_in..(b + 1) * f_in],
                    g,
                    &w[f * f_in..(f + 1) * f_in],
                );
            }
        }
    }
    (dx, dw, db)
}

/// Row-wise softmax of a `(rows, k)` buffer, stabilized by the row maximum.
/// Returns the probabilities and each row's log-sum-exp.
pub fn softmax_rows<T: Scalar>(logits: &[T], rows: usize, k: usize) -> (Vec<T>, Vec<T>) {
    let mut probs = Vec::with_capacity(rows * k);
    let mut lse = Vec::with_capacity(rows);
    for r in 0..rows {
        let z = &logits[r * k..(r + 1) * k];
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let s: T = z.iter().map(|&v| (v - m).exp()).sum();
        let log_s = s.ln();
        probs.extend(z.iter().map(|&v| (v - m - log_s).exp()));
        lse.push(m + log_s);
    }
    (probs, lse)
}
