//! Wall-clock scaling of forward passes with the token count.
//!
//! Each mechanism is timed on its own, single-threaded, one size after the
//! other: `warmup` untimed calls, then `reps` repeats of `iters` timed calls.
//! A repeat reports the median call time; the size reports the median over
//! repeats. The exponent is the least-squares slope of `ln t` against `ln N`.

use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::attention::{init_params, rpattention_forward, AttnConfig};
use crate::baselines::softmax_attention_forward;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// A timed workload: `prepare(n)` builds inputs for `n` tokens and returns
/// the closure that is timed.
pub struct Mechanism {
    pub name: String,
    #[allow(clippy::type_complexity)]
    prepare: Box<dyn Fn(usize) -> Result<Box<dyn FnMut() + Send>> + Send + Sync>,
}

impl Mechanism {
    pub fn new<P>(name: impl Into<String>, prepare: P) -> Self
    where
        P: Fn(usize) -> Result<Box<dyn FnMut() + Send>> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            prepare: Box::new(prepare),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechanismTiming {
    pub name: String,
    pub median_ms: Vec<f64>,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub sizes: Vec<usize>,
    pub mechanisms: Vec<MechanismTiming>,
    pub timer_resolution_ns: f64,
    /// Set when the fastest median is under 100 timer ticks.
    pub coarse_timer: bool,
}

impl ScalingReport {
    pub fn timing(&self, name: &str) -> Option<&MechanismTiming> {
        self.mechanisms.iter().find(|m| m.name == name)
    }

    /// Long format; `median_ms` is volatile between runs.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# timer_resolution_ns={:.1} coarse_timer={}\nmechanism,n,median_ms(volatile),slope(volatile)\n",
            self.timer_resolution_ns, self.coarse_timer
        );
        for m in &self.mechanisms {
            for (n, t) in self.sizes.iter().zip(&m.median_ms) {
                s.push_str(&format!("{},{n},{t:.6},{:.4}\n", m.name, m.slope));
            }
        }
        s
    }
}

/// Closed interval a fitted slope must fall in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeBand {
    pub lo: f64,
    pub hi: f64,
}

impl SlopeBand {
    pub const QUADRATIC_DUMMY: SlopeBand = SlopeBand { lo: 1.8, hi: 2.3 };
    pub const LINEAR_DUMMY: SlopeBand = SlopeBand { lo: 0.8, hi: 1.2 };
    pub const CONSTANT_DUMMY: SlopeBand = SlopeBand { lo: -0.2, hi: 0.2 };
    pub const RPATTENTION: SlopeBand = SlopeBand { lo: 0.8, hi: 1.4 };
    pub const SOFTMAX_DENSE: SlopeBand = SlopeBand { lo: 1.6, hi: 2.4 };

    pub fn contains(&self, slope: f64) -> bool {
        slope >= self.lo && slope <= self.hi
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Smallest observable non-zero `Instant` increment.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

pub fn measure_scaling(
    mechanisms: &[Mechanism],
    sizes: &[usize],
    reps: usize,
    warmup: usize,
    iters: usize,
) -> Result<ScalingReport> {
    if sizes.len() < 3 {
        return Err(Error::config("need at least three sizes"));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(Error::config("sizes must be positive and strictly increasing"));
    }
    if sizes[sizes.len() - 1] < 8 * sizes[0] {
        return Err(Error::config("sizes must span at least an 8x range"));
    }
    if reps == 0 || iters == 0 {
        return Err(Error::config("reps and iters must be positive"));
    }
    let resolution = timer_resolution();
    let mut out = Vec::with_capacity(mechanisms.len());
    for mech in mechanisms {
        let mut medians = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let mut run = (mech.prepare)(n)?;
            let ms = par::with_threads(0, move || {
                for _ in 0..warmup {
                    run();
                }
                let mut rep_medians: Vec<f64> = (0..reps)
                    .map(|_| {
                        let mut samples: Vec<f64> = (0..iters)
                            .map(|_| {
                                let t = Instant::now();
                                run();
                                t.elapsed().as_secs_f64() * 1e3
                            })
                            .collect();
                        median(&mut samples)
                    })
                    .collect();
                median(&mut rep_medians)
            });
            medians.push(ms);
        }
        let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
        // clamp to one timer tick so ln stays finite
        let floor = resolution.as_secs_f64() * 1e3;
        let ys: Vec<f64> = medians.iter().map(|&t| t.max(floor)).collect();
        out.push(MechanismTiming {
            name: mech.name.clone(),
            slope: loglog_slope(&xs, &ys),
            median_ms: medians,
        });
    }
    let fastest = out
        .iter()
        .flat_map(|m| m.median_ms.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let res_ms = resolution.as_secs_f64() * 1e3;
    Ok(ScalingReport {
        sizes: sizes.to_vec(),
        mechanisms: out,
        timer_resolution_ns: resolution.as_secs_f64() * 1e9,
        coarse_timer: fastest < 100.0 * res_ms,
    })
}

/// `N²` pairwise work.
pub fn quadratic_dummy() -> Mechanism {
    Mechanism::new("dummy_quadratic", |n| {
        let v: Vec<f32> = (0..n).map(|i| (i % 97) as f32 * 0.01).collect();
        Ok(Box::new(move || {
            let mut acc = 0.0f32;
            for &a in &v {
                for &b in &v {
                    acc += a * b;
                }
            }
            black_box(acc);
        }))
    })
}

/// `N` work with a fixed per-element cost.
pub fn linear_dummy() -> Mechanism {
    Mechanism::new("dummy_linear", |n| {
        let v: Vec<f32> = (0..n * 64).map(|i| (i % 89) as f32 * 0.01).collect();
        Ok(Box::new(move || {
            black_box(black_box(&v).iter().fold(0.0f32, |a, &x| a + x * x));
        }))
    })
}

/// Work independent of `N`.
pub fn constant_dummy() -> Mechanism {
    Mechanism::new("dummy_constant", |_| {
        let v: Vec<f32> = (0..1 << 16).map(|i| (i % 83) as f32 * 0.01).collect();
        Ok(Box::new(move || {
            black_box(black_box(&v).iter().fold(0.0f32, |a, &x| a + x * x));
        }))
    })
}

/// Most square `h × w = n` factorization with `h ≤ w`.
pub fn grid_for(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && !n.is_multiple_of(h) {
        h -= 1;
    }
    (h.max(1), n / h.max(1))
}

fn bench_input(n: usize, c: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, n, c], |i| ((i * 7919 % 1009) as f32 / 1009.0) - 0.5)
}

/// Representative layer in 32-bit with `m` slots.
pub fn rp_mechanism(channels: usize, heads: usize, m: usize, seed: u64) -> Mechanism {
    Mechanism::new("rpattention", move |n| {
        let (gh, gw) = grid_for(n);
        let cfg = AttnConfig::new(channels, heads, m, gh, gw);
        let params = init_params::<f32>(&cfg, seed)?;
        let x = bench_input(n, channels);
        Ok(Box::new(move || {
            let (y, _) = rpattention_forward(&x, &params, &cfg).expect("valid bench config");
            black_box(y);
        }))
    })
}

/// Dense softmax attention in 32-bit.
pub fn dense_mechanism(channels: usize, heads: usize, seed: u64) -> Mechanism {
    Mechanism::new("softmax_dense", move |n| {
        let (gh, gw) = grid_for(n);
        let cfg = AttnConfig::new(channels, heads, 1, gh, gw);
        let p = init_params::<f32>(&cfg, seed)?;
        let x = bench_input(n, channels);
        Ok(Box::new(move || {
            let y = softmax_attention_forward(&x, &p.w_q, &p.w_k, &p.w_v, &p.w_o, heads).expect("valid bench config");
            black_box(y);
        }))
    })
}
