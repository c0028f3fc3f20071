use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::AttnConfig;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Serialization and iteration order of the parameter tensors.
pub const PARAM_NAMES: [&str; 14] = [
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "w_g",
    "w_lq",
    "w_lk",
    "w_lv",
    "ln_k_gamma",
    "ln_k_beta",
    "ln_v_gamma",
    "ln_v_beta",
    "dwc_kernel",
    "dwc_bias",
];

/// Learnable weights of one layer. Projections act by right-multiplication
/// (`x · w`). The gather anchors `w_g` are shared by all heads.
#[derive(Clone, Debug, PartialEq)]
pub struct RPAttnParams<T = f64> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub w_g: Tensor<T>,
    pub w_lq: Tensor<T>,
    pub w_lk: Tensor<T>,
    pub w_lv: Tensor<T>,
    pub ln_k_gamma: Tensor<T>,
    pub ln_k_beta: Tensor<T>,
    pub ln_v_gamma: Tensor<T>,
    pub ln_v_beta: Tensor<T>,
    pub dwc_kernel: Tensor<T>,
    pub dwc_bias: Tensor<T>,
}

fn shapes(cfg: &AttnConfig) -> [Vec<usize>; 14] {
    let (c, d, m, k) = (cfg.channels, cfg.head_dim(), cfg.num_representatives, cfg.dwc_kernel);
    [
        vec![c, c],
        vec![c, c],
        vec![c, c],
        vec![c, c],
        vec![d, m],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d],
        vec![k, k, c],
        vec![c],
    ]
}

/// Total number of scalar weights for `cfg`.
pub fn param_count(cfg: &AttnConfig) -> usize {
    shapes(cfg).iter().map(|s| s.iter().product::<usize>()).sum()
}

impl<T: Real> RPAttnParams<T> {
    /// All-zero parameters with the shapes required by `cfg`.
    pub fn zeros(cfg: &AttnConfig) -> Self {
        let mut it = shapes(cfg).into_iter().map(|s| Tensor::zeros(&s));
        let mut next = || it.next().expect("14 shapes");
        Self {
            w_q: next(),
            w_k: next(),
            w_v: next(),
            w_o: next(),
            w_g: next(),
            w_lq: next(),
            w_lk: next(),
            w_lv: next(),
            ln_k_gamma: next(),
            ln_k_beta: next(),
            ln_v_gamma: next(),
            ln_v_beta: next(),
            dwc_kernel: next(),
            dwc_bias: next(),
        }
    }

    pub fn fields(&self) -> [(&'static str, &Tensor<T>); 14] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("w_g", &self.w_g),
            ("w_lq", &self.w_lq),
            ("w_lk", &self.w_lk),
            ("w_lv", &self.w_lv),
            ("ln_k_gamma", &self.ln_k_gamma),
            ("ln_k_beta", &self.ln_k_beta),
            ("ln_v_gamma", &self.ln_v_gamma),
            ("ln_v_beta", &self.ln_v_beta),
            ("dwc_kernel", &self.dwc_kernel),
            ("dwc_bias", &self.dwc_bias),
        ]
    }

    pub fn fields_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 14] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("w_g", &mut self.w_g),
            ("w_lq", &mut self.w_lq),
            ("w_lk", &mut self.w_lk),
            ("w_lv", &mut self.w_lv),
            ("ln_k_gamma", &mut self.ln_k_gamma),
            ("ln_k_beta", &mut self.ln_k_beta),
            ("ln_v_gamma", &mut self.ln_v_gamma),
            ("ln_v_beta", &mut self.ln_v_beta),
            ("dwc_kernel", &mut self.dwc_kernel),
            ("dwc_bias", &mut self.dwc_bias),
        ]
    }

    pub fn field(&self, name: &str) -> Option<&Tensor<T>> {
        self.fields().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.fields_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    /// Verifies every tensor has the shape `cfg` requires.
    pub fn check(&self, cfg: &AttnConfig) -> Result<()> {
        for ((name, t), want) in self.fields().iter().zip(shapes(cfg)) {
            if t.shape() != want.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, config requires {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds parameters from tensors given in [`PARAM_NAMES`] order.
    pub fn from_tensors(cfg: &AttnConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        let mut p = Self::zeros(cfg);
        for ((_, slot), t) in p.fields_mut().into_iter().zip(tensors) {
            *slot = t;
        }
        p.check(cfg)?;
        Ok(p)
    }

    pub fn cast<U: Real>(&self) -> RPAttnParams<U> {
        RPAttnParams {
            w_q: self.w_q.cast(),
            w_k: self.w_k.cast(),
            w_v: self.w_v.cast(),
            w_o: self.w_o.cast(),
            w_g: self.w_g.cast(),
            w_lq: self.w_lq.cast(),
            w_lk: self.w_lk.cast(),
            w_lv: self.w_lv.cast(),
            ln_k_gamma: self.ln_k_gamma.cast(),
            ln_k_beta: self.ln_k_beta.cast(),
            ln_v_gamma: self.ln_v_gamma.cast(),
            ln_v_beta: self.ln_v_beta.cast(),
            dwc_kernel: self.dwc_kernel.cast(),
            dwc_bias: self.dwc_bias.cast(),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.fields().iter().map(|(_, t)| t.len()).sum()
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

/// Seeded initialization.
///
/// Projections draw from `U(±1/√fan_in)`, anchors from `N(0, 0.02)` so the
/// initial routing is close to uniform, the depth-wise kernel from
/// `U(±1/k)`. Layer-norm gains start at one, all offsets at zero.
pub fn init_params<T: Real>(cfg: &AttnConfig, seed: u64) -> Result<RPAttnParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d, m, k) = (cfg.channels, cfg.head_dim(), cfg.num_representatives, cfg.dwc_kernel);
    let bc = 1.0 / (c as f64).sqrt();
    let bd = 1.0 / (d as f64).sqrt();
    let w_q = uniform(&mut rng, &[c, c], bc);
    let w_k = uniform(&mut rng, &[c, c], bc);
    let w_v = uniform(&mut rng, &[c, c], bc);
    let w_o = uniform(&mut rng, &[c, c], bc);
    let normal = Normal::new(0.0, 0.02).expect("valid normal");
    let w_g = Tensor::from_fn(&[d, m], |_| T::of(normal.sample(&mut rng)));
    let w_lq = uniform(&mut rng, &[d, d], bd);
    let w_lk = uniform(&mut rng, &[d, d], bd);
    let w_lv = uniform(&mut rng, &[d, d], bd);
    let dwc_kernel = uniform(&mut rng, &[k, k, c], 1.0 / k as f64);
    Ok(RPAttnParams {
        w_q,
        w_k,
        w_v,
        w_o,
        w_g,
        w_lq,
        w_lk,
        w_lv,
        ln_k_gamma: Tensor::full(&[d], T::one()),
        ln_k_beta: Tensor::zeros(&[d]),
        ln_v_gamma: Tensor::full(&[d], T::one()),
        ln_v_beta: Tensor::zeros(&[d]),
        dwc_kernel,
        dwc_bias: Tensor::zeros(&[c]),
    })
}
