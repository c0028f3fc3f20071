//! Dense multi-head softmax attention.

use crate::error::{Error, Result};
use crate::kernels::{bmm, gemm, linear, softmax_backward_rows, softmax_row, softmax_rows};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Weights of a dense attention layer (right-multiplied, no biases).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseWeights<T = f64> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

fn check<T: Real>(x: &Tensor<T>, w: [&Tensor<T>; 4], heads: usize) -> Result<(usize, usize, usize)> {
    let &[b, n, c] = x.shape() else {
        return Err(Error::shape("softmax_attention", x.shape(), &[0, 0, 0]));
    };
    for wi in w {
        if wi.shape() != [c, c] {
            return Err(Error::shape("softmax_attention", x.shape(), wi.shape()));
        }
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::config(format!("{c} channels not divisible by {heads} heads")));
    }
    Ok((b, n, c))
}

/// `Softmax(QKᵀ/√d)V` per head followed by the output projection.
///
/// Streams one query row at a time so memory stays `O(N)` per worker;
/// the arithmetic is still `O(N²)`.
pub fn softmax_attention_forward<T: Real>(
    x: &Tensor<T>,
    w_q: &Tensor<T>,
    w_k: &Tensor<T>,
    w_v: &Tensor<T>,
    w_o: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let (b, n, c) = check(x, [w_q, w_k, w_v, w_o], heads)?;
    let d = c / heads;
    let q = linear(x, w_q, None)?.split_heads(heads)?;
    let k = linear(x, w_k, None)?.split_heads(heads)?;
    let v = linear(x, w_v, None)?.split_heads(heads)?;
    let scale = T::one() / T::of(d as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut o = vec![T::zero(); b * heads * n * d];
    par::for_each_chunk_mut(&mut o, d, b * heads * n * n * d, |row, out| {
        let bh = row / n;
        let qr = &qd[row * d..(row + 1) * d];
        let keys = &kd[bh * n * d..(bh + 1) * n * d];
        let vals = &vd[bh * n * d..(bh + 1) * n * d];
        let mut s: Vec<T> = keys
            .chunks(d)
            .map(|kr| qr.iter().zip(kr).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale)
            .collect();
        softmax_row(&mut s);
        for (&p, vr) in s.iter().zip(vals.chunks(d)) {
            out.iter_mut().zip(vr).for_each(|(o, &v)| *o = *o + p * v);
        }
    });
    let o = Tensor::new(vec![b, heads, n, d], o)?.merge_heads()?;
    linear(&o, w_o, None)
}

/// Activations kept for [`softmax_attention_backward`].
#[derive(Clone, Debug)]
pub struct DenseTrace<T = f64> {
    pub x: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// Attention matrices `[B, h, N, N]`.
    pub p: Tensor<T>,
    /// Merged head outputs before `w_o`, `[B, N, C]`.
    pub o: Tensor<T>,
    pub output: Tensor<T>,
}

/// Materializing forward for training and checks; same result as
/// [`softmax_attention_forward`] up to summation order.
pub fn softmax_attention_traced<T: Real>(
    x: &Tensor<T>,
    w: &DenseWeights<T>,
    heads: usize,
) -> Result<(Tensor<T>, DenseTrace<T>)> {
    let (b, n, c) = check(x, [&w.w_q, &w.w_k, &w.w_v, &w.w_o], heads)?;
    let d = c / heads;
    let q = linear(x, &w.w_q, None)?.split_heads(heads)?;
    let k = linear(x, &w.w_k, None)?.split_heads(heads)?;
    let v = linear(x, &w.w_v, None)?.split_heads(heads)?;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut p = bmm(q.data(), false, k.data(), true, b * heads, n, d, n);
    p.iter_mut().for_each(|s| *s = *s * scale);
    softmax_rows(&mut p, n);
    let o = bmm(&p, false, v.data(), false, b * heads, n, n, d);
    let o = Tensor::new(vec![b, heads, n, d], o)?.merge_heads()?;
    let output = linear(&o, &w.w_o, None)?;
    let trace = DenseTrace {
        x: x.clone(),
        q,
        k,
        v,
        p: Tensor::new(vec![b, heads, n, n], p)?,
        o,
        output: output.clone(),
    };
    Ok((output, trace))
}

/// Gradients of `Σ grad_output ⊙ y`: `(weights, grad_x)`.
pub fn softmax_attention_backward<T: Real>(
    trace: &DenseTrace<T>,
    grad_output: &Tensor<T>,
    w: &DenseWeights<T>,
) -> Result<(DenseWeights<T>, Tensor<T>)> {
    if grad_output.shape() != trace.output.shape() {
        return Err(Error::Contract(format!(
            "grad_output shape {:?} does not match output {:?}",
            grad_output.shape(),
            trace.output.shape()
        )));
    }
    let &[b, heads, n, d] = trace.q.shape() else {
        return Err(Error::Contract("malformed dense trace".into()));
    };
    let c = heads * d;
    let rows = b * n;
    let bh = b * heads;
    let mut gw_o = vec![T::zero(); c * c];
    gemm(trace.o.data(), true, grad_output.data(), false, &mut gw_o, c, rows, c);
    let mut d_o = vec![T::zero(); rows * c];
    gemm(grad_output.data(), false, w.w_o.data(), true, &mut d_o, rows, c, c);
    let d_oh = Tensor::new(vec![b, n, c], d_o)?.split_heads(heads)?;
    let dp = bmm(d_oh.data(), false, trace.v.data(), true, bh, n, d, n);
    let dv = bmm(trace.p.data(), true, d_oh.data(), false, bh, n, n, d);
    let mut ds = softmax_backward_rows(trace.p.data(), &dp, n);
    let scale = T::one() / T::of(d as f64).sqrt();
    ds.iter_mut().for_each(|v| *v = *v * scale);
    let dq = bmm(&ds, false, trace.k.data(), false, bh, n, n, d);
    let dk = bmm(&ds, true, trace.q.data(), false, bh, n, n, d);
    let merge = |t: Vec<T>| Tensor::new(vec![b, heads, n, d], t).and_then(|t| t.merge_heads());
    let (dq, dk, dv) = (merge(dq)?, merge(dk)?, merge(dv)?);
    let xd = trace.x.data();
    let wgrad = |g: &Tensor<T>| {
        let mut out = vec![T::zero(); c * c];
        gemm(xd, true, g.data(), false, &mut out, c, rows, c);
        Tensor::new(vec![c, c], out)
    };
    let grads = DenseWeights {
        w_q: wgrad(&dq)?,
        w_k: wgrad(&dk)?,
        w_v: wgrad(&dv)?,
        w_o: Tensor::new(vec![c, c], gw_o)?,
    };
    let mut gx = vec![T::zero(); rows * c];
    let mut tmp = vec![T::zero(); rows * c];
    for (g, wm) in [(&dq, &w.w_q), (&dk, &w.w_k), (&dv, &w.w_v)] {
        gemm(g.data(), false, wm.data(), true, &mut tmp, rows, c, c);
        gx.iter_mut().zip(&tmp).for_each(|(a, &t)| *a = *a + t);
    }
    Ok((grads, Tensor::new(vec![b, n, c], gx)?))
}
