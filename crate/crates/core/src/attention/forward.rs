use super::config::{AttnConfig, Routing};
use super::params::RPAttnParams;
use crate::baselines::kmeans::kmeans_gather;
use crate::error::{Error, Result};
use crate::kernels::{self, bmm, depthwise_conv2d, layer_norm_rows, linear, softmax_rows, LayerNormCache};
use crate::real::Real;
use crate::tensor::Tensor;

/// Every intermediate of one forward pass.
///
/// Head-split tensors are `[B, h, ·, ·]`; token tensors are `[B, N, C]`.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f64> {
    pub x: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// `x · w_v` before head splitting; input of the depth-wise bypass.
    pub xv: Tensor<T>,
    pub a: Tensor<T>,
    pub a_hat: Tensor<T>,
    /// Slot masses `Σ_n A[n, m]`, shape `[B, h, M]`.
    pub mass: Tensor<T>,
    pub k_l: Tensor<T>,
    pub v_l: Tensor<T>,
    pub latent: Latents<T>,
    pub p_dist: Tensor<T>,
    pub o_global: Tensor<T>,
    pub bypass: Tensor<T>,
    pub output: Tensor<T>,
}

/// Output of the latent interaction stage.
#[derive(Clone, Debug)]
pub struct Latents<T = f64> {
    pub k_l_bar: Tensor<T>,
    pub v_l_bar: Tensor<T>,
    pub ln_k: LayerNormCache<T>,
    pub ln_v: LayerNormCache<T>,
    /// `(Q̃, K̃, Ṽ)`; absent when interaction is disabled.
    pub qkv: Option<(Tensor<T>, Tensor<T>, Tensor<T>)>,
    pub p_lat: Option<Tensor<T>>,
    pub z_l: Tensor<T>,
}

fn dims4<T: Real>(t: &Tensor<T>) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::shape("head tensor", s, &[0, 0, 0, 0])),
    }
}

/// Projects tokens and splits them into heads: `(Q, K, V)` each `[B, h, N, d]`.
pub fn project_qkv<T: Real>(
    x: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (q, k, _, v) = project_all(x, params, cfg)?;
    Ok((q, k, v))
}

fn project_all<T: Real>(
    x: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    let h = cfg.heads;
    let q = linear(x, &params.w_q, None)?.split_heads(h)?;
    let k = linear(x, &params.w_k, None)?.split_heads(h)?;
    let xv = linear(x, &params.w_v, None)?;
    let v = xv.split_heads(h)?;
    Ok((q, k, xv, v))
}

/// Soft assignment of every token to the `M` slots: softmax over slots of `K · W_g`.
pub fn gather_assign<T: Real>(k: &Tensor<T>, w_g: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, _, d] = dims4(k)?;
    if w_g.ndim() != 2 || w_g.shape()[0] != d {
        return Err(Error::shape("gather_assign", k.shape(), w_g.shape()));
    }
    let mut a = kernels::matmul(k, w_g)?;
    let m = w_g.shape()[1];
    softmax_rows(a.data_mut(), m);
    Ok(a)
}

/// Divides each assignment column by its token mass plus `eps`.
/// Returns `(Â, mass)` with mass of shape `[B, h, M]`.
pub fn mass_normalize<T: Real>(a: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, h, n, m] = dims4(a)?;
    let mut mass = vec![T::zero(); b * h * m];
    let mut out = a.data().to_vec();
    for bh in 0..b * h {
        let s = &mut mass[bh * m..(bh + 1) * m];
        let blk = &a.data()[bh * n * m..(bh + 1) * n * m];
        for row in blk.chunks(m) {
            s.iter_mut().zip(row).for_each(|(acc, &v)| *acc = *acc + v);
        }
        for row in out[bh * n * m..(bh + 1) * n * m].chunks_mut(m) {
            row.iter_mut().zip(s.iter()).for_each(|(v, &sm)| *v = *v / (sm + eps));
        }
    }
    Ok((Tensor::new(vec![b, h, n, m], out)?, Tensor::new(vec![b, h, m], mass)?))
}

/// `K_L = Âᵀ K`, `V_L = Âᵀ V` per head.
pub fn gather_latents<T: Real>(
    a_hat: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, h, n, m] = dims4(a_hat)?;
    let [kb, kh, kn, d] = dims4(k)?;
    if [kb, kh, kn] != [b, h, n] || v.shape() != k.shape() {
        return Err(Error::shape("gather_latents", a_hat.shape(), k.shape()));
    }
    let kl = bmm(a_hat.data(), true, k.data(), false, b * h, m, n, d);
    let vl = bmm(a_hat.data(), true, v.data(), false, b * h, m, n, d);
    Ok((
        Tensor::new(vec![b, h, m, d], kl)?,
        Tensor::new(vec![b, h, m, d], vl)?,
    ))
}

/// Normalizes the latents and runs residual self-attention among slots.
pub fn latent_interact<T: Real>(
    k_l: &Tensor<T>,
    v_l: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
) -> Result<Latents<T>> {
    let [b, h, m, d] = dims4(k_l)?;
    if v_l.shape() != k_l.shape() {
        return Err(Error::shape("latent_interact", k_l.shape(), v_l.shape()));
    }
    let eps = T::of(cfg.ln_eps);
    let (kb, ln_k) = layer_norm_rows(k_l.data(), params.ln_k_gamma.data(), params.ln_k_beta.data(), eps);
    let (vb, ln_v) = layer_norm_rows(v_l.data(), params.ln_v_gamma.data(), params.ln_v_beta.data(), eps);
    let shape = vec![b, h, m, d];
    let k_l_bar = Tensor::new(shape.clone(), kb)?;
    let v_l_bar = Tensor::new(shape.clone(), vb)?;
    if !cfg.enable_interact {
        return Ok(Latents {
            z_l: v_l_bar.clone(),
            k_l_bar,
            v_l_bar,
            ln_k,
            ln_v,
            qkv: None,
            p_lat: None,
        });
    }
    let qt = linear(&v_l_bar, &params.w_lq, None)?;
    let kt = linear(&v_l_bar, &params.w_lk, None)?;
    let vt = linear(&v_l_bar, &params.w_lv, None)?;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut p = bmm(qt.data(), false, kt.data(), true, b * h, m, d, m);
    p.iter_mut().for_each(|s| *s = *s * scale);
    softmax_rows(&mut p, m);
    let mix = bmm(&p, false, vt.data(), false, b * h, m, m, d);
    let z: Vec<T> = v_l_bar.data().iter().zip(&mix).map(|(&a, &c)| a + c).collect();
    Ok(Latents {
        z_l: Tensor::new(shape, z)?,
        k_l_bar,
        v_l_bar,
        ln_k,
        ln_v,
        qkv: Some((qt, kt, vt)),
        p_lat: Some(Tensor::new(vec![b, h, m, m], p)?),
    })
}

/// Cross-attention of the spatial queries over the slots; returns
/// `(O_global [B, N, C], P_dist [B, h, N, M])`.
pub fn distribute_global<T: Real>(
    q: &Tensor<T>,
    k_l_bar: &Tensor<T>,
    z_l: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, h, n, d] = dims4(q)?;
    let [kb, kh, m, kd] = dims4(k_l_bar)?;
    if [kb, kh, kd] != [b, h, d] || z_l.shape() != k_l_bar.shape() {
        return Err(Error::shape("distribute_global", q.shape(), k_l_bar.shape()));
    }
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut p = bmm(q.data(), false, k_l_bar.data(), true, b * h, n, d, m);
    p.iter_mut().for_each(|s| *s = *s * scale);
    softmax_rows(&mut p, m);
    let o = bmm(&p, false, z_l.data(), false, b * h, n, m, d);
    let o = Tensor::new(vec![b, h, n, d], o)?.merge_heads()?;
    Ok((o, Tensor::new(vec![b, h, n, m], p)?))
}

/// Depth-wise convolution of already projected values `xv = x · w_v`.
pub fn bypass_from_values<T: Real>(
    xv: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
) -> Result<Tensor<T>> {
    let &[b, n, c] = xv.shape() else {
        return Err(Error::shape("local_bypass", xv.shape(), &[0, cfg.tokens(), cfg.channels]));
    };
    if n != cfg.tokens() {
        return Err(Error::config(format!(
            "{n} tokens do not fill a {}x{} grid",
            cfg.grid_h, cfg.grid_w
        )));
    }
    if !cfg.enable_dwc {
        return Ok(Tensor::zeros(xv.shape()));
    }
    let grid = xv.clone().reshape(&[b, cfg.grid_h, cfg.grid_w, c])?;
    depthwise_conv2d(&grid, &params.dwc_kernel, &params.dwc_bias)?.reshape(&[b, n, c])
}

/// Local branch: `DWC(x · w_v)` on the token grid, zeros when disabled.
pub fn local_bypass<T: Real>(x: &Tensor<T>, params: &RPAttnParams<T>, cfg: &AttnConfig) -> Result<Tensor<T>> {
    let xv = linear(x, &params.w_v, None)?;
    bypass_from_values(&xv, params, cfg)
}

/// Slot assignment according to the configured routing.
pub fn route<T: Real>(k: &Tensor<T>, params: &RPAttnParams<T>, cfg: &AttnConfig) -> Result<Tensor<T>> {
    match cfg.routing {
        Routing::Learned => gather_assign(k, &params.w_g),
        Routing::Kmeans { iters, seed } => kmeans_gather(k, cfg.num_representatives, iters, seed),
    }
}

/// Full layer: `y = (O_global + DWC(x · w_v)) · w_o`.
pub fn rpattention_forward<T: Real>(
    x: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    cfg.validate()?;
    cfg.check_input(x.shape())?;
    params.check(cfg)?;
    let (q, k, xv, v) = project_all(x, params, cfg)?;
    let a = route(&k, params, cfg)?;
    let (a_hat, mass) = mass_normalize(&a, T::of(cfg.epsilon))?;
    let (k_l, v_l) = gather_latents(&a_hat, &k, &v)?;
    let latent = latent_interact(&k_l, &v_l, params, cfg)?;
    let (o_global, p_dist) = distribute_global(&q, &latent.k_l_bar, &latent.z_l)?;
    let bypass = bypass_from_values(&xv, params, cfg)?;
    let fused = o_global.add(&bypass)?;
    let output = linear(&fused, &params.w_o, None)?;
    let trace = ForwardTrace {
        x: x.clone(),
        q,
        k,
        v,
        xv,
        a,
        a_hat,
        mass,
        k_l,
        v_l,
        latent,
        p_dist,
        o_global,
        bypass,
        output: output.clone(),
    };
    Ok((output, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::init_params;

    fn cfg() -> AttnConfig {
        AttnConfig::new(4, 2, 2, 2, 2)
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let cfg = cfg();
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let (y, trace) = rpattention_forward(&Tensor::zeros(&[1, 4, 4]), &p, &cfg).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(trace.o_global.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_projection_single_head() {
        let mut cfg = AttnConfig::new(3, 1, 2, 2, 2);
        cfg.enable_dwc = false;
        let mut p = init_params::<f64>(&cfg, 2).unwrap();
        p.w_q = Tensor::eye(3);
        p.w_k = Tensor::eye(3);
        p.w_v = Tensor::eye(3);
        let x = Tensor::from_fn(&[1, 4, 3], |i| (i as f64).cos());
        let (q, k, v) = project_qkv(&x, &p, &cfg).unwrap();
        let xs = x.clone().reshape(&[1, 1, 4, 3]).unwrap();
        assert_eq!(q, xs);
        assert_eq!(k, xs);
        assert_eq!(v, xs);
    }

    #[test]
    fn uniform_and_single_slot_assignment() {
        let k = Tensor::<f64>::from_fn(&[1, 2, 5, 3], |i| i as f64 * 0.1);
        let a = gather_assign(&k, &Tensor::zeros(&[3, 4])).unwrap();
        assert!(a.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let a1 = gather_assign(&k, &Tensor::full(&[3, 1], 0.7)).unwrap();
        assert!(a1.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mass_normalize_guards_empty_slot() {
        let mut a = Tensor::<f64>::zeros(&[1, 1, 3, 2]);
        for n in 0..3 {
            a.set(&[0, 0, n, 0], 1.0);
        }
        let (ah, mass) = mass_normalize(&a, 1e-6).unwrap();
        assert!(ah.all_finite());
        assert!((0..3).all(|n| ah.at(&[0, 0, n, 1]) == 0.0));
        assert_eq!(mass.data(), &[3.0, 0.0]);
        let uniform = Tensor::<f64>::full(&[1, 1, 8, 4], 0.25);
        let (ah, _) = mass_normalize(&uniform, 1e-6).unwrap();
        let want = 0.25 / (2.0 + 1e-6);
        assert!(ah.data().iter().all(|&v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn constant_tokens_collapse() {
        let kvec = [0.3, -1.2, 2.0];
        let k = Tensor::<f64>::from_fn(&[1, 1, 6, 3], |i| kvec[i % 3]);
        let a = Tensor::<f64>::from_fn(&[1, 1, 6, 2], |i| ((i * 7 % 5) as f64 + 1.0) / 6.0);
        let (ah, mass) = mass_normalize(&a, 1e-6).unwrap();
        let (kl, _) = gather_latents(&ah, &k, &k).unwrap();
        for m in 0..2 {
            let s = mass.at(&[0, 0, m]);
            for j in 0..3 {
                let want = kvec[j] * s / (s + 1e-6);
                assert!((kl.at(&[0, 0, m, j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_gather_permutes_tokens() {
        let perm = [2usize, 0, 3, 1];
        let k = Tensor::<f64>::from_fn(&[1, 1, 4, 2], |i| i as f64 + 1.0);
        let mut ah = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        for (n, &m) in perm.iter().enumerate() {
            ah.set(&[0, 0, n, m], 1.0);
        }
        let (kl, _) = gather_latents(&ah, &k, &k).unwrap();
        for (n, &m) in perm.iter().enumerate() {
            for j in 0..2 {
                assert_eq!(kl.at(&[0, 0, m, j]), k.at(&[0, 0, n, j]));
            }
        }
    }

    #[test]
    fn interaction_special_cases() {
        let mut cfg = AttnConfig::new(6, 2, 1, 2, 2);
        let mut p = init_params::<f64>(&cfg, 3).unwrap();
        let kl = Tensor::<f64>::from_fn(&[1, 2, 1, 3], |i| (i as f64 * 1.7).sin());
        let vl = Tensor::<f64>::from_fn(&[1, 2, 1, 3], |i| (i as f64 * 0.9).cos());
        // single slot: attention weight is exactly 1
        let lat = latent_interact(&kl, &vl, &p, &cfg).unwrap();
        let (_, _, vt) = lat.qkv.as_ref().unwrap();
        assert!(lat.p_lat.as_ref().unwrap().data().iter().all(|&v| v == 1.0));
        let want = lat.v_l_bar.add(vt).unwrap();
        assert!(lat.z_l.max_abs_diff(&want) < 1e-15);

        cfg.num_representatives = 3;
        p.w_lv = Tensor::zeros(&[3, 3]);
        let kl = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 1.3).sin());
        let lat = latent_interact(&kl, &kl, &p, &cfg).unwrap();
        assert_eq!(lat.z_l, lat.v_l_bar);

        cfg.enable_interact = false;
        let lat = latent_interact(&kl, &kl, &p, &cfg).unwrap();
        assert_eq!(lat.z_l, lat.v_l_bar);
        assert!(lat.p_lat.is_none());
    }

    #[test]
    fn distribute_special_cases() {
        let q = Tensor::<f64>::from_fn(&[1, 2, 5, 2], |i| (i as f64).sin());
        let kb = Tensor::<f64>::from_fn(&[1, 2, 1, 2], |i| i as f64);
        let z = Tensor::<f64>::from_fn(&[1, 2, 1, 2], |i| 10.0 + i as f64);
        let (o, _) = distribute_global(&q, &kb, &z).unwrap();
        for n in 0..5 {
            assert_eq!(&o.data()[n * 4..n * 4 + 4], &[10.0, 11.0, 12.0, 13.0]);
        }
        let kb = Tensor::<f64>::from_fn(&[1, 1, 3, 2], |i| i as f64);
        let z = Tensor::<f64>::from_fn(&[1, 1, 3, 2], |i| (i * i) as f64);
        let (o, p) = distribute_global(&Tensor::zeros(&[1, 1, 4, 2]), &kb, &z).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let mean = [(0.0 + 4.0 + 16.0) / 3.0, (1.0 + 9.0 + 25.0) / 3.0];
        for row in o.data().chunks(2) {
            assert!((row[0] - mean[0]).abs() < 1e-12 && (row[1] - mean[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn bypass_identity_and_disabled() {
        let mut cfg = AttnConfig::new(3, 1, 2, 2, 3);
        let mut p = init_params::<f64>(&cfg, 4).unwrap();
        p.w_v = Tensor::eye(3);
        p.dwc_kernel = Tensor::zeros(&[3, 3, 3]);
        for c in 0..3 {
            p.dwc_kernel.set(&[1, 1, c], 1.0);
        }
        let x = Tensor::from_fn(&[2, 6, 3], |i| i as f64 - 4.0);
        assert_eq!(local_bypass(&x, &p, &cfg).unwrap(), x);
        cfg.enable_dwc = false;
        assert!(local_bypass(&x, &p, &cfg).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = Tensor::<f64>::zeros(&[1, 5, 3]);
        assert!(matches!(local_bypass(&bad, &p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn large_m_is_accepted() {
        let cfg = AttnConfig::new(4, 2, 9, 2, 2);
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let x = Tensor::from_fn(&[1, 4, 4], |i| (i as f64).sin());
        let (y, t) = rpattention_forward(&x, &p, &cfg).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(t.a.shape(), &[1, 2, 4, 9]);
    }
}
