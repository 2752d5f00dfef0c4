//! Stateless forward and gradient rules for the layer primitives.
//!
//! Convolutions evaluate the direct sum. Work is split across batch items
//! (or output channels for weight gradients) so that every reduction runs in
//! a fixed order regardless of thread count.

use rayon::prelude::*;

use super::Tensor3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output length of a sliding window: `floor((len + pads - k) / stride) + 1`.
pub fn window_out_len(
    len: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Option<usize> {
    let padded = len + pad_left + pad_right;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Padding that keeps length unchanged at stride 1. For even `k` the extra
/// sample goes on the right.
pub fn same_padding(k: usize) -> (usize, usize) {
    if k % 2 == 1 {
        ((k - 1) / 2, (k - 1) / 2)
    } else {
        (k / 2 - 1, k / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeometry {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        window_out_len(len, self.kernel, self.stride, self.pad_left, self.pad_right)
    }

    /// Output positions `t` whose tap `j` lands inside an input of `len` samples.
    #[inline]
    fn valid_range(&self, j: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad_left > j {
            (self.pad_left - j).div_ceil(s)
        } else {
            0
        };
        let reach = len + self.pad_left;
        let hi = if reach > j {
            ((reach - j - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// `out[b,o,t] = bias[o] + sum_{c,j} w[o,c,j] * x_padded[b,c,t*stride+j]`
/// with zero padding.
pub fn conv1d<S: Scalar>(
    layer: &str,
    x: &Tensor3<S>,
    weight: &[S],
    bias: Option<&[S]>,
    g: ConvGeometry,
) -> Result<Tensor3<S>> {
    if x.channels() != g.c_in {
        return Err(Error::shape(
            layer,
            format!("expected {} input channels, got {}", g.c_in, x.channels()),
        ));
    }
    debug_assert_eq!(weight.len(), g.weight_len());
    let len = x.length();
    let out_len = g.out_len(len).ok_or_else(|| {
        Error::shape(
            layer,
            format!(
                "input length {len} too short for kernel {} (pads {}+{})",
                g.kernel, g.pad_left, g.pad_right
            ),
        )
    })?;
    let mut out = Tensor3::zeros(x.batch(), g.c_out, out_len);
    let item_out = g.c_out * out_len;
    if item_out == 0 {
        return Ok(out);
    }
    let k = g.kernel;
    let s = g.stride;
    out.data_mut()
        .par_chunks_mut(item_out)
        .enumerate()
        .for_each(|(b, dst)| {
            let src = x.item(b);
            for o in 0..g.c_out {
                let row = &mut dst[o * out_len..(o + 1) * out_len];
                if let Some(bias) = bias {
                    row.iter_mut().for_each(|v| *v = bias[o]);
                }
                for c in 0..g.c_in {
                    let xr = &src[c * len..(c + 1) * len];
                    let wr = &weight[(o * g.c_in + c) * k..(o * g.c_in + c + 1) * k];
                    for (j, &w) in wr.iter().enumerate() {
                        let (lo, hi) = g.valid_range(j, len, out_len);
                        if lo >= hi {
                            continue;
                        }
                        let base = lo * s + j - g.pad_left;
                        if s == 1 {
                            let xs = &xr[base..base + (hi - lo)];
                            for (r, &xv) in row[lo..hi].iter_mut().zip(xs) {
                                *r += w * xv;
                            }
                        } else {
                            for (i, r) in row[lo..hi].iter_mut().enumerate() {
                                *r += w * xr[base + i * s];
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv1d`]: `(d input, d weight, d bias)`.
pub fn conv1d_backward<S: Scalar>(
    x: &Tensor3<S>,
    weight: &[S],
    grad_out: &Tensor3<S>,
    g: ConvGeometry,
) -> (Tensor3<S>, Vec<S>, Vec<S>) {
    let len = x.length();
    let out_len = grad_out.length();
    let k = g.kernel;
    let s = g.stride;
    let batch = x.batch();

    let mut dx = Tensor3::zeros(batch, g.c_in, len);
    let item_in = g.c_in * len;
    if item_in > 0 {
        dx.data_mut()
            .par_chunks_mut(item_in)
            .enumerate()
            .for_each(|(b, dst)| {
                let go = grad_out.item(b);
                for o in 0..g.c_out {
                    let gr = &go[o * out_len..(o + 1) * out_len];
                    for c in 0..g.c_in {
                        let xr = &mut dst[c * len..(c + 1) * len];
                        let wr = &weight[(o * g.c_in + c) * k..(o * g.c_in + c + 1) * k];
                        for (j, &w) in wr.iter().enumerate() {
                            let (lo, hi) = g.valid_range(j, len, out_len);
                            if lo >= hi {
                                continue;
                            }
                            let base = lo * s + j - g.pad_left;
                            if s == 1 {
                                let xs = &mut xr[base..base + (hi - lo)];
                                for (d, &gv) in xs.iter_mut().zip(&gr[lo..hi]) {
                                    *d += w * gv;
                                }
                            } else {
                                for (i, &gv) in gr[lo..hi].iter().enumerate() {
                                    xr[base + i * s] += w * gv;
                                }
                            }
                        }
                    }
                }
            });
    }

    let mut dw = vec![S::zero(); g.weight_len()];
    let per_out = g.c_in * k;
    if per_out > 0 {
        dw.par_chunks_mut(per_out).enumerate().for_each(|(o, dst)| {
            for b in 0..batch {
                let gr = grad_out.row(b, o);
                for c in 0..g.c_in {
                    let xr = x.row(b, c);
                    for j in 0..k {
                        let (lo, hi) = g.valid_range(j, len, out_len);
                        if lo >= hi {
                            continue;
                        }
                        let base = lo * s + j - g.pad_left;
                        let mut acc = S::zero();
                        if s == 1 {
                            for (&gv, &xv) in gr[lo..hi].iter().zip(&xr[base..base + (hi - lo)]) {
                                acc += gv * xv;
                            }
                        } else {
                            for (i, &gv) in gr[lo..hi].iter().enumerate() {
                                acc += gv * xr[base + i * s];
                            }
                        }
                        dst[c * k + j] += acc;
                    }
                }
            }
        });
    }

    let mut db = vec![S::zero(); g.c_out];
    for (o, d) in db.iter_mut().enumerate() {
        for b in 0..batch {
            *d += grad_out.row(b, o).iter().copied().sum::<S>();
        }
    }
    (dx, dw, db)
}

/// Per-channel statistics of a train-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Population variance over batch x length.
    pub var: Vec<S>,
    pub inv_std: Vec<S>,
}

/// Normalizes with batch statistics; returns the output, the normalized
/// input (pre-affine) and the statistics.
pub fn batch_norm_train<S: Scalar>(
    x: &Tensor3<S>,
    scale: &[S],
    shift: &[S],
    epsilon: S,
) -> (Tensor3<S>, Tensor3<S>, BatchStats<S>) {
    let (batch, ch, len) = x.shape();
    let n = S::from_usize_lossy(batch * len);
    let mut mean = vec![S::zero(); ch];
    let mut var = vec![S::zero(); ch];
    for c in 0..ch {
        let mut sum = S::zero();
        for b in 0..batch {
            sum += x.row(b, c).iter().copied().sum::<S>();
        }
        let m = sum / n;
        let mut sq = S::zero();
        for b in 0..batch {
            for &v in x.row(b, c) {
                let d = v - m;
                sq += d * d;
            }
        }
        mean[c] = m;
        var[c] = sq / n;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| (v + epsilon).sqrt().recip()).collect();
    let mut x_hat = Tensor3::zeros(batch, ch, len);
    let mut out = Tensor3::zeros(batch, ch, len);
    for b in 0..batch {
        for c in 0..ch {
            for t in 0..len {
                let h = (x.get(b, c, t) - mean[c]) * inv_std[c];
                x_hat.set(b, c, t, h);
                out.set(b, c, t, scale[c] * h + shift[c]);
            }
        }
    }
    (out, x_hat, BatchStats { mean, var, inv_std })
}

/// Normalizes with supplied (running) statistics.
pub fn batch_norm_infer<S: Scalar>(
    x: &Tensor3<S>,
    scale: &[S],
    shift: &[S],
    mean: &[S],
    var: &[S],
    epsilon: S,
) -> (Tensor3<S>, Tensor3<S>, Vec<S>) {
    let (batch, ch, len) = x.shape();
    let inv_std: Vec<S> = var.iter().map(|&v| (v + epsilon).sqrt().recip()).collect();
    let mut x_hat = Tensor3::zeros(batch, ch, len);
    let mut out = Tensor3::zeros(batch, ch, len);
    for b in 0..batch {
        for c in 0..ch {
            for t in 0..len {
                let h = (x.get(b, c, t) - mean[c]) * inv_std[c];
                x_hat.set(b, c, t, h);
                out.set(b, c, t, scale[c] * h + shift[c]);
            }
        }
    }
    (out, x_hat, inv_std)
}

/// Gradients of train-mode batch norm: `(d input, d scale, d shift)`.
pub fn batch_norm_train_backward<S: Scalar>(
    grad: &Tensor3<S>,
    x_hat: &Tensor3<S>,
    inv_std: &[S],
    scale: &[S],
) -> (Tensor3<S>, Vec<S>, Vec<S>) {
    let (batch, ch, len) = grad.shape();
    let n = S::from_usize_lossy(batch * len);
    let mut dscale = vec![S::zero(); ch];
    let mut dshift = vec![S::zero(); ch];
    for c in 0..ch {
        for b in 0..batch {
            for (&g, &h) in grad.row(b, c).iter().zip(x_hat.row(b, c)) {
                dshift[c] += g;
                dscale[c] += g * h;
            }
        }
    }
    let mut dx = Tensor3::zeros(batch, ch, len);
    for c in 0..ch {
        let k = scale[c] * inv_std[c] / n;
        for b in 0..batch {
            for t in 0..len {
                let g = grad.get(b, c, t);
                let h = x_hat.get(b, c, t);
                dx.set(b, c, t, k * (n * g - dshift[c] - h * dscale[c]));
            }
        }
    }
    (dx, dscale, dshift)
}

/// Gradients of infer-mode batch norm, where the statistics are constants.
pub fn batch_norm_infer_backward<S: Scalar>(
    grad: &Tensor3<S>,
    x_hat: &Tensor3<S>,
    inv_std: &[S],
    scale: &[S],
) -> (Tensor3<S>, Vec<S>, Vec<S>) {
    let (batch, ch, len) = grad.shape();
    let mut dscale = vec![S::zero(); ch];
    let mut dshift = vec![S::zero(); ch];
    let mut dx = Tensor3::zeros(batch, ch, len);
    for b in 0..batch {
        for c in 0..ch {
            for t in 0..len {
                let g = grad.get(b, c, t);
                dshift[c] += g;
                dscale[c] += g * x_hat.get(b, c, t);
                dx.set(b, c, t, g * scale[c] * inv_std[c]);
            }
        }
    }
    (dx, dscale, dshift)
}

pub fn relu<S: Scalar>(x: &Tensor3<S>) -> Tensor3<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Gradient of ReLU given its output: passes where the output is positive.
pub fn relu_backward<S: Scalar>(output: &Tensor3<S>, grad: &Tensor3<S>) -> Tensor3<S> {
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| if y > S::zero() { g } else { S::zero() })
        .collect();
    grad.with_data(data)
}

/// Max pooling with implicit negative-infinity padding. Returns the output
/// and, per output element, the flat input index it was taken from (lowest
/// index on ties).
pub fn max_pool<S: Scalar>(
    layer: &str,
    x: &Tensor3<S>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor3<S>, Vec<usize>)> {
    let (batch, ch, len) = x.shape();
    let out_len = window_out_len(len, k, stride, pad, pad)
        .ok_or_else(|| Error::shape(layer, format!("input length {len} too short for pool {k}")))?;
    let mut out = Tensor3::zeros(batch, ch, out_len);
    let mut arg = vec![0usize; batch * ch * out_len];
    for b in 0..batch {
        for c in 0..ch {
            let row = x.row(b, c);
            let row_start = x.index(b, c, 0);
            for t in 0..out_len {
                let start = (t * stride) as isize - pad as isize;
                let mut best = S::neg_infinity();
                let mut best_i = None;
                for j in 0..k {
                    let p = start + j as isize;
                    if p < 0 || p as usize >= len {
                        continue;
                    }
                    let v = row[p as usize];
                    if best_i.is_none() || v > best {
                        best = v;
                        best_i = Some(p as usize);
                    }
                }
                let i = best_i
                    .ok_or_else(|| Error::shape(layer, "pool window lies entirely in padding"))?;
                out.set(b, c, t, best);
                arg[out.index(b, c, t)] = row_start + i;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_backward<S: Scalar>(
    input_shape: (usize, usize, usize),
    argmax: &[usize],
    grad: &Tensor3<S>,
) -> Tensor3<S> {
    let (b, c, l) = input_shape;
    let mut dx = Tensor3::zeros(b, c, l);
    for (&i, &g) in argmax.iter().zip(grad.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Mean over the length axis; the result has length 1.
pub fn global_avg_pool<S: Scalar>(x: &Tensor3<S>) -> Tensor3<S> {
    let (batch, ch, len) = x.shape();
    let n = S::from_usize_lossy(len);
    Tensor3::from_fn(batch, ch, 1, |b, c, _| {
        x.row(b, c).iter().copied().sum::<S>() / n
    })
}

pub fn global_avg_pool_backward<S: Scalar>(len: usize, grad: &Tensor3<S>) -> Tensor3<S> {
    let n = S::from_usize_lossy(len);
    Tensor3::from_fn(grad.batch(), grad.channels(), len, |b, c, _| {
        grad.get(b, c, 0) / n
    })
}

/// `out[b,m] = bias[m] + sum_c weight[m,c] * x[b,c]` on a length-1 tensor.
pub fn linear<S: Scalar>(
    layer: &str,
    x: &Tensor3<S>,
    weight: &[S],
    bias: &[S],
    in_features: usize,
    out_features: usize,
) -> Result<Tensor3<S>> {
    if x.length() != 1 || x.channels() != in_features {
        return Err(Error::shape(
            layer,
            format!("expected (batch, {in_features}, 1), got {:?}", x.shape()),
        ));
    }
    Ok(Tensor3::from_fn(x.batch(), out_features, 1, |b, m, _| {
        let w = &weight[m * in_features..(m + 1) * in_features];
        bias[m] + w.iter().zip(x.item(b)).map(|(&w, &v)| w * v).sum::<S>()
    }))
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor3<S>,
    weight: &[S],
    grad: &Tensor3<S>,
    in_features: usize,
    out_features: usize,
) -> (Tensor3<S>, Vec<S>, Vec<S>) {
    let batch = x.batch();
    let dx = Tensor3::from_fn(batch, in_features, 1, |b, c, _| {
        (0..out_features)
            .map(|m| weight[m * in_features + c] * grad.get(b, m, 0))
            .sum::<S>()
    });
    let mut dw = vec![S::zero(); in_features * out_features];
    let mut db = vec![S::zero(); out_features];
    for b in 0..batch {
        for m in 0..out_features {
            let g = grad.get(b, m, 0);
            db[m] += g;
            for c in 0..in_features {
                dw[m * in_features + c] += g * x.get(b, c, 0);
            }
        }
    }
    (dx, dw, db)
}

/// Stacks tensors along the channel axis.
pub fn concat_channels<S: Scalar>(parts: &[Tensor3<S>]) -> Result<Tensor3<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let (batch, _, len) = first.shape();
    for (i, p) in parts.iter().enumerate() {
        if p.batch() != batch || p.length() != len {
            return Err(Error::shape(
                "concat",
                format!(
                    "input {i} has shape {:?}, expected batch {batch} and length {len}",
                    p.shape()
                ),
            ));
        }
    }
    let channels: usize = parts.iter().map(Tensor3::channels).sum();
    let mut data = Vec::with_capacity(batch * channels * len);
    for b in 0..batch {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor3::from_vec(batch, channels, len, data)
}

/// Inverse of [`concat_channels`]: splits into consecutive channel groups.
pub fn split_channels<S: Scalar>(x: &Tensor3<S>, sizes: &[usize]) -> Result<Vec<Tensor3<S>>> {
    if sizes.iter().sum::<usize>() != x.channels() {
        return Err(Error::shape(
            "split",
            format!("group sizes {sizes:?} do not sum to {}", x.channels()),
        ));
    }
    let (batch, _, len) = x.shape();
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &n in sizes {
        let mut data = Vec::with_capacity(batch * n * len);
        for b in 0..batch {
            let item = x.item(b);
            data.extend_from_slice(&item[offset * len..(offset + n) * len]);
        }
        out.push(Tensor3::from_vec(batch, n, len, data)?);
        offset += n;
    }
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid<S: Scalar>(x: &Tensor3<S>) -> Tensor3<S> {
    x.map(sigmoid_scalar)
}
