//! Hand-written backward pass of the representative layer and a central
//! finite-difference checker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{init_params, rpattention_forward, AttnConfig, ForwardTrace, RPAttnParams, Routing};
use crate::error::{Error, Result};
use crate::kernels::{bmm, depthwise_conv2d_backward, gemm, layer_norm_backward_rows, softmax_backward_rows};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Gradients for every parameter plus the layer input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet<T = f64> {
    pub params: RPAttnParams<T>,
    pub x: Tensor<T>,
}

impl<T: Real> GradSet<T> {
    pub fn all_finite(&self) -> bool {
        self.x.all_finite() && self.params.fields().iter().all(|(_, t)| t.all_finite())
    }
}

fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

fn add_into<T: Real>(acc: &mut [T], other: &[T]) {
    acc.iter_mut().zip(other).for_each(|(a, &b)| *a = *a + b);
}

/// `Aᵀ B` summed over all leading rows: `a` is `rows × p`, `b` is `rows × q`.
fn outer_sum<T: Real>(a: &[T], b: &[T], rows: usize, p: usize, q: usize) -> Vec<T> {
    let mut out = vec![T::zero(); p * q];
    gemm(a, true, b, false, &mut out, p, rows, q);
    out
}

/// `A Wᵀ` for `a` of shape `rows × q` and `w` of shape `p × q`.
fn times_transpose<T: Real>(a: &[T], w: &[T], rows: usize, q: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * p];
    gemm(a, false, w, true, &mut out, rows, q, p);
    out
}

fn check_trace<T: Real>(trace: &ForwardTrace<T>, grad_output: &Tensor<T>, params: &RPAttnParams<T>, cfg: &AttnConfig) -> Result<()> {
    params.check(cfg)?;
    let b = cfg.check_input(trace.x.shape()).map_err(|e| contract(format!("trace input: {e}")))?;
    if grad_output.shape() != trace.output.shape() {
        return Err(contract(format!(
            "grad_output {:?} does not match output {:?}",
            grad_output.shape(),
            trace.output.shape()
        )));
    }
    let want_a = [b, cfg.heads, cfg.tokens(), cfg.num_representatives];
    if trace.a.shape() != want_a || trace.q.shape() != [b, cfg.heads, cfg.tokens(), cfg.head_dim()] {
        return Err(contract("trace was produced with a different configuration"));
    }
    if trace.latent.qkv.is_some() != cfg.enable_interact {
        return Err(contract("trace interaction mode differs from config"));
    }
    Ok(())
}

/// Exact gradients of `Σ grad_output ⊙ y` for the forward recorded in `trace`.
///
/// Under k-means routing the assignments are constants, so `w_g` receives
/// zero gradient.
pub fn rpattention_backward<T: Real>(
    trace: &ForwardTrace<T>,
    grad_output: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
) -> Result<GradSet<T>> {
    check_trace(trace, grad_output, params, cfg)?;
    let (heads, n, d, m, c) = (cfg.heads, cfg.tokens(), cfg.head_dim(), cfg.num_representatives, cfg.channels);
    let b = trace.x.shape()[0];
    let bh = b * heads;
    let rows = b * n;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut g = RPAttnParams::<T>::zeros(cfg);

    // output projection
    let fused = trace.o_global.add(&trace.bypass)?;
    g.w_o = Tensor::new(vec![c, c], outer_sum(fused.data(), grad_output.data(), rows, c, c))?;
    let d_fused = Tensor::new(vec![b, n, c], times_transpose(grad_output.data(), params.w_o.data(), rows, c, c))?;

    // local bypass
    let mut d_xv = vec![T::zero(); rows * c];
    if cfg.enable_dwc {
        let grid = trace.xv.clone().reshape(&[b, cfg.grid_h, cfg.grid_w, c])?;
        let dy = d_fused.clone().reshape(&[b, cfg.grid_h, cfg.grid_w, c])?;
        let (dx, dk, db) = depthwise_conv2d_backward(&grid, &params.dwc_kernel, &params.dwc_bias, &dy)?;
        d_xv = dx.into_data();
        g.dwc_kernel = dk;
        g.dwc_bias = db;
    }

    // distribution
    let lat = &trace.latent;
    let d_oh = d_fused.split_heads(heads)?;
    let p = trace.p_dist.data();
    let dp = bmm(d_oh.data(), false, lat.z_l.data(), true, bh, n, d, m);
    let mut d_z = bmm(p, true, d_oh.data(), false, bh, m, n, d);
    let mut ds = softmax_backward_rows(p, &dp, m);
    ds.iter_mut().for_each(|v| *v = *v * scale);
    let d_q = bmm(&ds, false, lat.k_l_bar.data(), false, bh, n, m, d);
    let d_kbar = bmm(&ds, true, trace.q.data(), false, bh, m, n, d);

    // latent interaction
    let lrows = bh * m;
    let mut d_vbar = d_z.clone();
    if let (Some((qt, kt, vt)), Some(pl)) = (&lat.qkv, &lat.p_lat) {
        let dpl = bmm(&d_z, false, vt.data(), true, bh, m, d, m);
        let d_vt = bmm(pl.data(), true, &d_z, false, bh, m, m, d);
        let mut dsl = softmax_backward_rows(pl.data(), &dpl, m);
        dsl.iter_mut().for_each(|v| *v = *v * scale);
        let d_qt = bmm(&dsl, false, kt.data(), false, bh, m, m, d);
        let d_kt = bmm(&dsl, true, qt.data(), false, bh, m, m, d);
        let vbar = lat.v_l_bar.data();
        g.w_lq = Tensor::new(vec![d, d], outer_sum(vbar, &d_qt, lrows, d, d))?;
        g.w_lk = Tensor::new(vec![d, d], outer_sum(vbar, &d_kt, lrows, d, d))?;
        g.w_lv = Tensor::new(vec![d, d], outer_sum(vbar, &d_vt, lrows, d, d))?;
        add_into(&mut d_vbar, &times_transpose(&d_qt, params.w_lq.data(), lrows, d, d));
        add_into(&mut d_vbar, &times_transpose(&d_kt, params.w_lk.data(), lrows, d, d));
        add_into(&mut d_vbar, &times_transpose(&d_vt, params.w_lv.data(), lrows, d, d));
    }
    d_z.clear();

    // layer norms
    let d_kl = layer_norm_backward_rows(
        &d_kbar,
        &lat.ln_k,
        params.ln_k_gamma.data(),
        g.ln_k_gamma.data_mut(),
        g.ln_k_beta.data_mut(),
    );
    let mut dgv = vec![T::zero(); d];
    let mut dbv = vec![T::zero(); d];
    let d_vl = layer_norm_backward_rows(&d_vbar, &lat.ln_v, params.ln_v_gamma.data(), &mut dgv, &mut dbv);
    g.ln_v_gamma = Tensor::new(vec![d], dgv)?;
    g.ln_v_beta = Tensor::new(vec![d], dbv)?;

    // gather
    let a_hat = trace.a_hat.data();
    let mut d_ahat = bmm(trace.k.data(), false, &d_kl, true, bh, n, d, m);
    add_into(&mut d_ahat, &bmm(trace.v.data(), false, &d_vl, true, bh, n, d, m));
    let mut d_k = bmm(a_hat, false, &d_kl, false, bh, n, m, d);
    let d_v = bmm(a_hat, false, &d_vl, false, bh, n, m, d);

    if cfg.routing == Routing::Learned {
        // quotient rule through Â = A / (S + ε)
        let eps = T::of(cfg.epsilon);
        let a = trace.a.data();
        let mut d_a = vec![T::zero(); a.len()];
        for blk in 0..bh {
            let off = blk * n * m;
            for j in 0..m {
                let denom = trace.mass.data()[blk * m + j] + eps;
                let mut col = T::zero();
                for t in 0..n {
                    col = col + d_ahat[off + t * m + j] * a[off + t * m + j];
                }
                let corr = col / (denom * denom);
                for t in 0..n {
                    d_a[off + t * m + j] = d_ahat[off + t * m + j] / denom - corr;
                }
            }
        }
        let d_logits = softmax_backward_rows(a, &d_a, m);
        g.w_g = Tensor::new(vec![d, m], outer_sum(trace.k.data(), &d_logits, bh * n, d, m))?;
        add_into(&mut d_k, &times_transpose(&d_logits, params.w_g.data(), bh * n, m, d));
    }

    // input projections
    let merge = |t: Vec<T>| Tensor::new(vec![b, heads, n, d], t).and_then(|t| t.merge_heads());
    let d_q = merge(d_q)?;
    let d_k = merge(d_k)?;
    add_into(&mut d_xv, merge(d_v)?.data());
    let xd = trace.x.data();
    g.w_q = Tensor::new(vec![c, c], outer_sum(xd, d_q.data(), rows, c, c))?;
    g.w_k = Tensor::new(vec![c, c], outer_sum(xd, d_k.data(), rows, c, c))?;
    g.w_v = Tensor::new(vec![c, c], outer_sum(xd, &d_xv, rows, c, c))?;
    let mut gx = times_transpose(d_q.data(), params.w_q.data(), rows, c, c);
    add_into(&mut gx, &times_transpose(d_k.data(), params.w_k.data(), rows, c, c));
    add_into(&mut gx, &times_transpose(&d_xv, params.w_v.data(), rows, c, c));

    Ok(GradSet {
        params: g,
        x: Tensor::new(vec![b, n, c], gx)?,
    })
}

/// Central differences `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every entry.
/// Probes are independent and may run in parallel.
pub fn finite_diff_grad<F>(loss_fn: F, tensor: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> f64 + Send + Sync,
{
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let vals = par::map_indices(tensor.len(), |i| {
        let mut probe = tensor.clone();
        probe.data_mut()[i] = tensor.data()[i] + h;
        let up = loss_fn(&probe);
        probe.data_mut()[i] = tensor.data()[i] - h;
        let down = loss_fn(&probe);
        (up - down) / (2.0 * h)
    });
    Tensor::new(tensor.shape().to_vec(), vals)
}

/// `|a − b| / max(|a|, |b|, 1e-8)`, maximized over entries.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter is unused by the configured forward; its analytic gradient
    /// was verified to be exactly zero instead of probed.
    pub skipped: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub entries: Vec<GradcheckEntry>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    /// CSV with header `parameter,max_rel_error,max_abs_error,skipped,pass`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,max_rel_error,max_abs_error,skipped,pass\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{:.6e},{:.6e},{},{}\n",
                e.name, e.max_rel_error, e.max_abs_error, e.skipped, e.passed
            ));
        }
        s
    }
}

/// Seeded input and upstream gradient for a gradient check.
pub fn probe_inputs(cfg: &AttnConfig, batch: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = [batch, cfg.tokens(), cfg.channels];
    let x = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
    let g = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
    (x, g)
}

fn unused_params(cfg: &AttnConfig) -> Vec<&'static str> {
    let mut out = Vec::new();
    if !cfg.enable_dwc {
        out.extend(["dwc_kernel", "dwc_bias"]);
    }
    if !cfg.enable_interact {
        out.extend(["w_lq", "w_lk", "w_lv"]);
    }
    if cfg.routing != Routing::Learned {
        out.push("w_g");
    }
    out
}

/// Compares the analytic backward with central differences on every
/// parameter and on the input, for seeded parameters, input and upstream
/// gradient (batch of one).
pub fn gradcheck(cfg: &AttnConfig, seed: u64, h: f64, tol: f64) -> Result<GradcheckReport> {
    cfg.validate()?;
    let params: RPAttnParams<f64> = init_params(cfg, seed)?;
    let (x, g) = probe_inputs(cfg, 1, seed);
    let (_, trace) = rpattention_forward(&x, &params, cfg)?;
    let grads = rpattention_backward(&trace, &g, &params, cfg)?;
    let loss = |x: &Tensor<f64>, p: &RPAttnParams<f64>| -> f64 {
        rpattention_forward(x, p, cfg)
            .map(|(y, _)| y.dot(&g).expect("same shape"))
            .unwrap_or(f64::NAN)
    };
    let unused = unused_params(cfg);
    let mut entries = Vec::new();
    let mut judge = |name: &str, analytic: &Tensor<f64>, numeric: Option<Tensor<f64>>| -> Result<()> {
        if let Some(i) = analytic.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("analytic gradient {name}[{i}]")));
        }
        let entry = match numeric {
            Some(num) => {
                if let Some(i) = num.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("numeric gradient {name}[{i}]")));
                }
                let rel = max_relative_error(analytic, &num);
                GradcheckEntry {
                    name: name.to_string(),
                    max_rel_error: rel,
                    max_abs_error: analytic.max_abs_diff(&num),
                    skipped: false,
                    passed: rel < tol,
                }
            }
            None => {
                let abs = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                GradcheckEntry {
                    name: name.to_string(),
                    max_rel_error: 0.0,
                    max_abs_error: abs,
                    skipped: true,
                    passed: abs == 0.0,
                }
            }
        };
        entries.push(entry);
        Ok(())
    };
    for (name, value) in params.fields() {
        let analytic = grads.params.field(name).expect("same layout");
        if unused.contains(&name) {
            judge(name, analytic, None)?;
            continue;
        }
        let numeric = finite_diff_grad(
            |t| {
                let mut p = params.clone();
                *p.field_mut(name).expect("known field") = t.clone();
                loss(&x, &p)
            },
            value,
            h,
        )?;
        judge(name, analytic, Some(numeric))?;
    }
    let numeric_x = finite_diff_grad(|t| loss(t, &params), &x, h)?;
    judge("x", &grads.x, Some(numeric_x))?;
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradcheckReport { seed, entries, passed })
}

/// The small configuration used for gradient checks: `C = 8`, two heads
/// (`d = 4`), three slots, a 3×4 grid.
pub fn small_config() -> AttnConfig {
    AttnConfig::new(8, 2, 3, 3, 4)
}
