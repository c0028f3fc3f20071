//! Dense numeric primitives.
//!
//! Every reduction runs in ascending index order inside one output element.
//! Parallel builds split work only across output rows, so results do not
//! depend on the thread count.

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Row-major GEMM on raw slices: `out = op(a) · op(b)` with `op(a)` of shape
/// `m×k` and `op(b)` of shape `k×n`. `ta`/`tb` select transposed storage.
/// `out` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    let a_at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
    par::for_each_chunk_mut(out, n, m * n * k, |i, row| {
        if tb {
            for (j, o) in row.iter_mut().enumerate() {
                let bj = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (p, &bv) in bj.iter().enumerate() {
                    acc = acc + a_at(i, p) * bv;
                }
                *o = acc;
            }
        } else {
            row.iter_mut().for_each(|o| *o = T::zero());
            for p in 0..k {
                let aip = a_at(i, p);
                let bp = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(bp) {
                    *o = *o + aip * bv;
                }
            }
        }
    });
}

/// `batch` independent GEMMs over contiguous slices; see [`gemm`].
#[allow(clippy::too_many_arguments)]
pub fn bmm<T: Real>(
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    if m * n == 0 {
        return out;
    }
    par::for_each_chunk_mut(&mut out, m * n, batch * m * n * k, |bi, o| {
        gemm(
            &a[bi * m * k..(bi + 1) * m * k],
            ta,
            &b[bi * k * n..(bi + 1) * k * n],
            tb,
            o,
            m,
            k,
            n,
        )
    });
    out
}

/// Batched matrix product over the trailing two axes.
///
/// Leading axes must match exactly, or one operand may be a plain matrix
/// that is reused for every batch entry.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ra, rb) = (a.ndim(), b.ndim());
    if ra < 2 || rb < 2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (p, q) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (q2, r) = (b.shape()[rb - 2], b.shape()[rb - 1]);
    if q != q2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let lead_a = &a.shape()[..ra - 2];
    let lead_b = &b.shape()[..rb - 2];
    let lead: Vec<usize> = if lead_a == lead_b || lead_b.is_empty() {
        lead_a.to_vec()
    } else if lead_a.is_empty() {
        lead_b.to_vec()
    } else {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    };
    let batch: usize = lead.iter().product();
    let mut out = vec![T::zero(); batch * p * r];
    for bi in 0..batch {
        let ab = if lead_a.is_empty() { 0 } else { bi };
        let bb = if lead_b.is_empty() { 0 } else { bi };
        gemm(
            &a.data()[ab * p * q..(ab + 1) * p * q],
            false,
            &b.data()[bb * q * r..(bb + 1) * q * r],
            false,
            &mut out[bi * p * r..(bi + 1) * p * r],
            p,
            q,
            r,
        );
    }
    let mut shape = lead;
    shape.extend([p, r]);
    Tensor::new(shape, out)
}

/// Affine map over the last axis: `x · w (+ bias)`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if w.ndim() != 2 || x.ndim() == 0 || x.last_dim() != w.shape()[0] {
        return Err(Error::shape("linear", x.shape(), w.shape()));
    }
    let (p, q) = (w.shape()[0], w.shape()[1]);
    if let Some(b) = bias {
        if b.shape() != [q] {
            return Err(Error::shape("linear bias", b.shape(), &[q]));
        }
    }
    let rows = x.len() / p.max(1);
    let mut out = vec![T::zero(); rows * q];
    gemm(x.data(), false, w.data(), false, &mut out, rows, p, q);
    if let Some(b) = bias {
        for row in out.chunks_mut(q) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o = *o + bv);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = q;
    Tensor::new(shape, out)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|x| *x = *x * inv);
}

/// In-place softmax over consecutive rows of length `width`.
pub fn softmax_rows<T: Real>(data: &mut [T], width: usize) {
    par::for_each_chunk_mut(data, width, data.len() * 4, |_, row| softmax_row(row));
}

/// Softmax along the last axis.
pub fn softmax_lastdim<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let w = x.last_dim();
    softmax_rows(out.data_mut(), w);
    out
}

/// Backward of a row softmax: given probabilities `p` and upstream `dp`,
/// returns `p ⊙ (dp − ⟨dp, p⟩)` per row.
pub fn softmax_backward_rows<T: Real>(p: &[T], dp: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p.len()];
    for ((o, pr), dr) in out
        .chunks_mut(width)
        .zip(p.chunks(width))
        .zip(dp.chunks(width))
    {
        let inner = pr.iter().zip(dr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        for ((o, &pv), &dv) in o.iter_mut().zip(pr).zip(dr) {
            *o = pv * (dv - inner);
        }
    }
    out
}

/// Per-row layer-norm statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    /// Normalized input before the affine map.
    pub xhat: Vec<T>,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Vec<T>,
}

/// Layer norm over rows of width `gamma.len()`, returning output and cache.
pub fn layer_norm_rows<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, LayerNormCache<T>) {
    let d = gamma.len();
    let rows = x.len() / d;
    let dn = T::of(d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().fold(T::zero(), |a, &v| a + v) / dn;
        let var = xr.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

/// Layer norm backward. Accumulates into `dgamma`/`dbeta` and returns `dx`.
pub fn layer_norm_backward_rows<T: Real>(
    dy: &[T],
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let d = gamma.len();
    let dn = T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for (r, &is) in cache.inv_std.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for j in 0..d {
            dgamma[j] = dgamma[j] + dyr[j] * xh[j];
            dbeta[j] = dbeta[j] + dyr[j];
            let g = dyr[j] * gamma[j];
            mean_g = mean_g + g;
            mean_gx = mean_gx + g * xh[j];
        }
        mean_g = mean_g / dn;
        mean_gx = mean_gx / dn;
        for j in 0..d {
            let g = dyr[j] * gamma[j];
            dx[r * d + j] = is * (g - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

/// Layer normalization over the last axis.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if !(eps > T::zero()) {
        return Err(Error::config("layer_norm eps must be positive"));
    }
    let (y, _) = layer_norm_rows(x.data(), gamma.data(), beta.data(), eps);
    Tensor::new(x.shape().to_vec(), y)
}

fn dwc_dims<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<[usize; 5]> {
    let &[b, h, w, c] = x.shape() else {
        return Err(Error::shape("depthwise_conv2d", x.shape(), kernel.shape()));
    };
    let &[k, k2, kc] = kernel.shape() else {
        return Err(Error::shape("depthwise_conv2d", x.shape(), kernel.shape()));
    };
    if k != k2 || kc != c || bias.shape() != [c] {
        return Err(Error::shape("depthwise_conv2d", x.shape(), kernel.shape()));
    }
    if k % 2 == 0 {
        return Err(Error::config(format!("depthwise kernel size {k} must be odd")));
    }
    Ok([b, h, w, c, k])
}

/// Depth-wise 2-D convolution, NHWC, zero "same" padding.
pub fn depthwise_conv2d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, h, w, c, k] = dwc_dims(x, kernel, bias)?;
    let r = (k / 2) as isize;
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![T::zero(); x.len()];
    // one chunk per output pixel row (all channels of one grid row)
    par::for_each_chunk_mut(&mut out, w * c, x.len() * k * k, |row_idx, orow| {
        let (bi, i) = (row_idx / h, (row_idx % h) as isize);
        for j in 0..w as isize {
            let o = &mut orow[j as usize * c..(j as usize + 1) * c];
            for u in 0..k as isize {
                let ii = i + u - r;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for v in 0..k as isize {
                    let jj = j + v - r;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let src = ((bi * h + ii as usize) * w + jj as usize) * c;
                    let kof = ((u * k as isize + v) as usize) * c;
                    for ch in 0..c {
                        o[ch] = o[ch] + kd[kof + ch] * xd[src + ch];
                    }
                }
            }
            for ch in 0..c {
                o[ch] = o[ch] + bias.data()[ch];
            }
        }
    });
    Tensor::new(vec![b, h, w, c], out)
}

/// Gradients of [`depthwise_conv2d`]: `(dx, dkernel, dbias)`.
pub fn depthwise_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, h, w, c, k] = dwc_dims(x, kernel, bias)?;
    if dy.shape() != x.shape() {
        return Err(Error::shape("depthwise_conv2d_backward", dy.shape(), x.shape()));
    }
    let r = (k / 2) as isize;
    let (xd, kd, gd) = (x.data(), kernel.data(), dy.data());
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); c];
    for bi in 0..b {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let dst = ((bi * h + i as usize) * w + j as usize) * c;
                for ch in 0..c {
                    db[ch] = db[ch] + gd[dst + ch];
                }
                for u in 0..k as isize {
                    let ii = i + u - r;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for v in 0..k as isize {
                        let jj = j + v - r;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let src = ((bi * h + ii as usize) * w + jj as usize) * c;
                        let kof = ((u * k as isize + v) as usize) * c;
                        for ch in 0..c {
                            dk[kof + ch] = dk[kof + ch] + gd[dst + ch] * xd[src + ch];
                            dx[src + ch] = dx[src + ch] + gd[dst + ch] * kd[kof + ch];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![c], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_permutation() {
        let i3 = Tensor::<f64>::eye(3);
        assert_eq!(matmul(&i3, &i3).unwrap(), i3);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let p = t(&[2, 2], &[0., 1., 1., 0.]);
        assert_eq!(matmul(&a, &p).unwrap().data(), &[2., 1., 4., 3.]);
    }

    #[test]
    fn matmul_rejects_mismatch_naming_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
        let a = Tensor::<f64>::zeros(&[2, 2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 3, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn gemm_transposes_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4
        let mut plain = vec![0.0; 8];
        gemm(&a, false, &b, false, &mut plain, 2, 3, 4);
        let at = t(&[2, 3], &a).transpose_last2().unwrap();
        let bt = t(&[3, 4], &b).transpose_last2().unwrap();
        let mut both = vec![0.0; 8];
        gemm(at.data(), true, bt.data(), true, &mut both, 2, 3, 4);
        assert_eq!(plain, both);
    }

    #[test]
    fn softmax_cases() {
        let u = softmax_lastdim(&t(&[3], &[0., 0., 0.]));
        assert!(u.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax_lastdim(&t(&[2], &[1000., 0.]));
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);
        let r = softmax_lastdim(&t(&[3], &[1., 2., 3.]));
        for (got, want) in r.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let one = Tensor::<f64>::full(&[4], 1.0);
        let zero = Tensor::<f64>::zeros(&[4]);
        let y = layer_norm(&Tensor::full(&[4], 7.0), &one, &zero, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = layer_norm(&t(&[2], &[1., 3.]), &t(&[2], &[1., 1.]), &t(&[2], &[0., 0.]), 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-10 && (y.data()[1] - 1.0).abs() < 1e-10);
        assert!(layer_norm(&t(&[2], &[1., 3.]), &t(&[2], &[1., 1.]), &t(&[2], &[0., 0.]), 0.0).is_err());
    }

    #[test]
    fn dwc_delta_and_counting() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 4, 2], |i| i as f64);
        let mut delta = Tensor::<f64>::zeros(&[3, 3, 2]);
        delta.set(&[1, 1, 0], 1.0);
        delta.set(&[1, 1, 1], 1.0);
        let y = depthwise_conv2d(&x, &delta, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y, x);

        let ones = Tensor::<f64>::full(&[1, 5, 5, 1], 1.0);
        let k = Tensor::<f64>::full(&[3, 3, 1], 1.0);
        let y = depthwise_conv2d(&ones, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.at(&[0, 2, 2, 0]), 9.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 4, 4, 0]), 4.0);
        assert_eq!(y.at(&[0, 0, 2, 0]), 6.0);
    }

    #[test]
    fn dwc_even_kernel_is_config_error() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 1]);
        let k = Tensor::<f64>::zeros(&[2, 2, 1]);
        let err = depthwise_conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(linear(&x, &Tensor::eye(4), None).unwrap(), x);
        let b = t(&[2], &[0.5, -1.0]);
        let y = linear(&Tensor::zeros(&[3, 4]), &Tensor::zeros(&[4, 2]), Some(&b)).unwrap();
        assert!(y.data().chunks(2).all(|r| r == [0.5, -1.0]));
        assert!(linear(&x, &Tensor::zeros(&[3, 2]), None).is_err());
    }
}
