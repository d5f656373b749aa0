//! Forward kernels on plain tensors. The autodiff [`Graph`](super::Graph)
//! calls these and records what its backward rules need.

use super::Tensor;
use crate::error::{Error, Result};

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(Error::contract(format!(
            "{op}: expected a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a · b` for `a: [m×k]`, `b: [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_2d("matmul", a)?;
    let (k2, n) = require_2d("matmul", b)?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`. Linear layers store weights as
/// `[d_out×d_in]`, so `x · Wᵀ` is the common case.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_2d("matmul_nt", a)?;
    let (n, k2) = require_2d("matmul_nt", b)?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `aᵀ · b` for `a: [k×m]`, `b: [k×n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = require_2d("matmul_tn", a)?;
    let (k2, n) = require_2d("matmul_tn", b)?;
    if k != k2 {
        return Err(Error::dim("matmul_tn", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &api) in ad[p * m..(p + 1) * m].iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; summation order is fixed, so results
    // stay deterministic.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = require_2d("transpose", a)?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// How the right operand of an elementwise binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand is a vector repeated over every row of the left.
    Rows,
}

pub(crate) fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    let row_like = b.ndim() == 1 || (b.ndim() == 2 && b.shape()[0] == 1);
    if a.ndim() >= 1 && row_like && b.numel() == a.last_dim() {
        return Ok(Broadcast::Rows);
    }
    Err(Error::dim(op, a.shape(), b.shape()))
}

fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let kind = broadcast_kind(op, a, b)?;
    let bd = b.data();
    let data = match kind {
        Broadcast::Same => a.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Rows => {
            let d = bd.len();
            a.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % d]))
                .collect()
        }
    };
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Elementwise sum; a vector `b` matching `a`'s last extent is added to every row.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

/// Elementwise product with the same broadcasting rule as [`add`].
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|x| x * c)
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(
    op: &'static str,
    shape: &[usize],
    axis: usize,
) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Index {
            op,
            index: axis,
            extent: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Max-subtracted softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split("softmax", x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(xd[idx(k)]);
            }
            let mut sum = 0.0;
            for k in 0..len {
                let e = (xd[idx(k)] - max).exp();
                out[idx(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[idx(k)] /= sum;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Root-mean-square normalization of each row (last axis), scaled by `gain`.
/// No mean subtraction and no bias, as in T5.
pub fn rms_norm(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if gain.numel() != d || gain.ndim() != 1 {
        return Err(Error::dim("rms_norm", x.shape(), gain.shape()));
    }
    let g = gain.data();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let inv = 1.0 / (ms + eps).sqrt();
        for (v, &gj) in row.iter_mut().zip(g) {
            *v *= inv * gj;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gathers rows of `table: [V×d]` into `[ids.len()×d]`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (v, d) = require_2d("embedding_lookup", table)?;
    if ids.is_empty() {
        return Err(Error::contract("embedding_lookup: empty id list"));
    }
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::Index {
                op: "embedding_lookup",
                index: id,
                extent: v,
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), d], out))
}

/// Arithmetic mean along `axis`; that axis is removed from the shape.
pub fn mean(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split("mean", x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let src = &xd[(o * len + k) * inner..(o * len + k + 1) * inner];
            for (dst, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *dst += s;
            }
        }
    }
    for v in &mut out {
        *v /= len as f64;
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Ok(Tensor::from_parts(shape, out))
}

pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

/// Mean token-level cross entropy of `logits: [n×V]` against `targets`.
/// Positions whose target is `None` are padding and excluded from the mean.
/// Also returns the row softmax, which the backward pass reuses.
pub fn cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> Result<(Tensor, Tensor)> {
    let (n, v) = require_2d("cross_entropy", logits)?;
    if targets.len() != n {
        return Err(Error::dim(
            "cross_entropy",
            logits.shape(),
            &[targets.len()],
        ));
    }
    let probs = softmax(logits, 1)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        if t >= v {
            return Err(Error::Index {
                op: "cross_entropy",
                index: t,
                extent: v,
            });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        count += 1;
    }
    if count == 0 {
        return Err(Error::contract("cross_entropy: every position is padding"));
    }
    Ok((Tensor::scalar(total / count as f64), probs))
}

/// Columns `[start, end)` of a matrix.
pub fn slice_cols(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (m, n) = require_2d("slice_cols", x)?;
    if start >= end || end > n {
        return Err(Error::Index {
            op: "slice_cols",
            index: end,
            extent: n,
        });
    }
    let w = end - start;
    let mut out = Vec::with_capacity(m * w);
    for i in 0..m {
        out.extend_from_slice(&x.data()[i * n + start..i * n + end]);
    }
    Ok(Tensor::from_parts(vec![m, w], out))
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat_cols: no inputs"))?;
    let (m, _) = require_2d("concat_cols", first)?;
    let mut total = 0;
    for p in parts {
        let (pm, pn) = require_2d("concat_cols", p)?;
        if pm != m {
            return Err(Error::dim("concat_cols", first.shape(), p.shape()));
        }
        total += pn;
    }
    let mut out = Vec::with_capacity(m * total);
    for i in 0..m {
        for p in parts {
            out.extend_from_slice(p.row(i));
        }
    }
    Ok(Tensor::from_parts(vec![m, total], out))
}
