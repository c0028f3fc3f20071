//! Grid-pooled proxy attention: latent tokens are cell averages of the
//! keys and values, so they are tied to image coordinates.

use crate::attention::{bypass_from_values, distribute_global, AttnConfig, RPAttnParams};
use crate::error::{Error, Result};
use crate::kernels::linear;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PooledOutput<T = f64> {
    pub y: Tensor<T>,
    /// Cell-averaged keys `[B, h, M, d]` with `M = g_h · g_w`.
    pub latent_k: Tensor<T>,
    pub latent_v: Tensor<T>,
}

/// Average-pools head tensors `[B, h, N, d]` laid out on a `grid_h × grid_w`
/// grid into `g_h × g_w` cells (row-major cell order).
pub fn grid_pool<T: Real>(t: &Tensor<T>, grid: (usize, usize), pool: (usize, usize)) -> Result<Tensor<T>> {
    let &[b, h, n, d] = t.shape() else {
        return Err(Error::shape("grid_pool", t.shape(), &[0, 0, 0, 0]));
    };
    let (gh, gw) = grid;
    let (ph, pw) = pool;
    if gh * gw != n {
        return Err(Error::config(format!("{n} tokens do not fill a {gh}x{gw} grid")));
    }
    if ph == 0 || pw == 0 || gh % ph != 0 || gw % pw != 0 {
        return Err(Error::config(format!("grid {gh}x{gw} not divisible by pool grid {ph}x{pw}")));
    }
    let (ch, cw) = (gh / ph, gw / pw);
    let m = ph * pw;
    let inv = T::one() / T::of((ch * cw) as f64);
    let mut out = vec![T::zero(); b * h * m * d];
    for bh in 0..b * h {
        for cy in 0..ph {
            for cx in 0..pw {
                let dst = &mut out[(bh * m + cy * pw + cx) * d..(bh * m + cy * pw + cx + 1) * d];
                for i in cy * ch..(cy + 1) * ch {
                    for j in cx * cw..(cx + 1) * cw {
                        let src = &t.data()[(bh * n + i * gw + j) * d..(bh * n + i * gw + j + 1) * d];
                        dst.iter_mut().zip(src).for_each(|(o, &v)| *o = *o + v);
                    }
                }
                dst.iter_mut().for_each(|o| *o = *o * inv);
            }
        }
    }
    Tensor::new(vec![b, h, m, d], out)
}

/// Queries attend over pooled keys and read pooled values; the local
/// bypass and output projection match the representative layer.
pub fn pooled_proxy_forward<T: Real>(
    x: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
    pool_grid: (usize, usize),
) -> Result<PooledOutput<T>> {
    cfg.check_input(x.shape())?;
    let grid = (cfg.grid_h, cfg.grid_w);
    let q = linear(x, &params.w_q, None)?.split_heads(cfg.heads)?;
    let k = linear(x, &params.w_k, None)?.split_heads(cfg.heads)?;
    let xv = linear(x, &params.w_v, None)?;
    let v = xv.split_heads(cfg.heads)?;
    let latent_k = grid_pool(&k, grid, pool_grid)?;
    let latent_v = grid_pool(&v, grid, pool_grid)?;
    let (o, _) = distribute_global(&q, &latent_k, &latent_v)?;
    let bypass = bypass_from_values(&xv, params, cfg)?;
    let y = linear(&o.add(&bypass)?, &params.w_o, None)?;
    Ok(PooledOutput { y, latent_k, latent_v })
}
