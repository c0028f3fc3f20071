//! Naive-loop oracles shared by the integration tests. Nothing here calls
//! into the crate's kernels.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rpattn::{AttnConfig, RPAttnParams, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

pub fn rand_dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `a (m×k) · b (k×n)`, row-major.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let mut top = f64::NEG_INFINITY;
    for &v in row {
        if v > top {
            top = v;
        }
    }
    let mut z = 0.0;
    for &v in row {
        z += (v - top).exp();
    }
    row.iter().map(|&v| (v - top).exp() / z).collect()
}

pub fn naive_layer_norm(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mut mean = 0.0;
    for &v in row {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for &v in row {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    (0..row.len())
        .map(|j| gamma[j] * (row[j] - mean) / (var + eps).sqrt() + beta[j])
        .collect()
}

/// Depth-wise cross-correlation on `[B, H, W, C]` with `[k, k, C]` taps,
/// zero padding, output the same size.
pub fn naive_dwc(x: &[f64], kernel: &[f64], bias: &[f64], dims: [usize; 4], k: usize) -> Vec<f64> {
    let [b, h, w, c] = dims;
    let r = (k / 2) as isize;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let mut s = bias[ch];
                    for u in 0..k {
                        for v in 0..k {
                            let ii = i as isize + u as isize - r;
                            let jj = j as isize + v as isize - r;
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            let src = ((bi * h + ii as usize) * w + jj as usize) * c + ch;
                            s += kernel[(u * k + v) * c + ch] * x[src];
                        }
                    }
                    out[((bi * h + i) * w + j) * c + ch] = s;
                }
            }
        }
    }
    out
}

fn rows(t: &[f64], width: usize) -> Vec<Vec<f64>> {
    t.chunks(width).map(|r| r.to_vec()).collect()
}

fn mat(a: &[Vec<f64>], w: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    a.iter()
        .map(|r| {
            (0..n)
                .map(|j| (0..k).map(|p| r[p] * w.data()[p * n + j]).sum())
                .collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The layer written out token by token with nested vectors, for learned
/// routing. Returns `y` as `[B, N, C]`.
pub fn naive_forward(x: &Tensor<f64>, p: &RPAttnParams<f64>, cfg: &AttnConfig) -> Vec<f64> {
    let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (heads, m) = (cfg.heads, cfg.num_representatives);
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut y = Vec::with_capacity(b * n * c);
    for bi in 0..b {
        let xb = rows(&x.data()[bi * n * c..(bi + 1) * n * c], c);
        let q = mat(&xb, &p.w_q);
        let k = mat(&xb, &p.w_k);
        let v = mat(&xb, &p.w_v);
        let mut fused = vec![vec![0.0; c]; n];
        for hh in 0..heads {
            let slice = |t: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { t.iter().map(|r| r[hh * d..(hh + 1) * d].to_vec()).collect() };
            let (qh, kh, vh) = (slice(&q), slice(&k), slice(&v));
            let a: Vec<Vec<f64>> = mat(&kh, &p.w_g).iter().map(|r| naive_softmax(r)).collect();
            let mass: Vec<f64> = (0..m).map(|s| (0..n).map(|t| a[t][s]).sum()).collect();
            let mut kl = vec![vec![0.0; d]; m];
            let mut vl = vec![vec![0.0; d]; m];
            for s in 0..m {
                for t in 0..n {
                    let w = a[t][s] / (mass[s] + cfg.epsilon);
                    for j in 0..d {
                        kl[s][j] += w * kh[t][j];
                        vl[s][j] += w * vh[t][j];
                    }
                }
            }
            let kbar: Vec<Vec<f64>> = kl
                .iter()
                .map(|r| naive_layer_norm(r, p.ln_k_gamma.data(), p.ln_k_beta.data(), cfg.ln_eps))
                .collect();
            let vbar: Vec<Vec<f64>> = vl
                .iter()
                .map(|r| naive_layer_norm(r, p.ln_v_gamma.data(), p.ln_v_beta.data(), cfg.ln_eps))
                .collect();
            let z = if cfg.enable_interact {
                let (qt, kt, vt) = (mat(&vbar, &p.w_lq), mat(&vbar, &p.w_lk), mat(&vbar, &p.w_lv));
                (0..m)
                    .map(|s| {
                        let att = naive_softmax(&(0..m).map(|u| dot(&qt[s], &kt[u]) * scale).collect::<Vec<_>>());
                        (0..d)
                            .map(|j| vbar[s][j] + (0..m).map(|u| att[u] * vt[u][j]).sum::<f64>())
                            .collect()
                    })
                    .collect()
            } else {
                vbar.clone()
            };
            for t in 0..n {
                let att = naive_softmax(&(0..m).map(|s| dot(&qh[t], &kbar[s]) * scale).collect::<Vec<_>>());
                for j in 0..d {
                    fused[t][hh * d + j] += (0..m).map(|s| att[s] * z[s][j]).sum::<f64>();
                }
            }
        }
        if cfg.enable_dwc {
            let flat: Vec<f64> = v.concat();
            let conv = naive_dwc(
                &flat,
                p.dwc_kernel.data(),
                p.dwc_bias.data(),
                [1, cfg.grid_h, cfg.grid_w, c],
                cfg.dwc_kernel,
            );
            for t in 0..n {
                for ch in 0..c {
                    fused[t][ch] += conv[t * c + ch];
                }
            }
        }
        for r in mat(&fused, &p.w_o) {
            y.extend(r);
        }
    }
    y
}

/// Applies a token permutation: output token `i` is input token `perm[i]`.
pub fn permute_tokens(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Tensor::from_fn(&[b, n, c], |idx| {
        let (bi, rest) = (idx / (n * c), idx % (n * c));
        let (t, ch) = (rest / c, rest % c);
        x.data()[(bi * n + perm[t]) * c + ch]
    })
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
