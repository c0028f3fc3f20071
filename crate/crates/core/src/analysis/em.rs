//! Straight-loop reading of the gather step as one E-step (softmax
//! responsibilities over learned anchors) followed by one M-step
//! (mass-normalized weighted mean). Shares no code with the layer so the
//! two can be checked against each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{gather_assign, gather_latents, mass_normalize};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EmStep {
    /// Responsibilities `[h, N, M]`.
    pub a: Tensor<f64>,
    /// Mass-normalized responsibilities `[h, N, M]`.
    pub a_hat: Tensor<f64>,
    /// Slot means `[h, M, d]`.
    pub k_l: Tensor<f64>,
}

/// One E/M round for keys `[h, N, d]` and anchors `[d, M]`.
pub fn em_one_step_oracle(keys: &Tensor<f64>, anchors: &Tensor<f64>, eps: f64) -> Result<EmStep> {
    let &[heads, n, d] = keys.shape() else {
        return Err(Error::shape("em_one_step_oracle", keys.shape(), anchors.shape()));
    };
    let &[ad, m] = anchors.shape() else {
        return Err(Error::shape("em_one_step_oracle", keys.shape(), anchors.shape()));
    };
    if ad != d {
        return Err(Error::shape("em_one_step_oracle", keys.shape(), anchors.shape()));
    }
    let key = |h: usize, t: usize, j: usize| keys.data()[(h * n + t) * d + j];
    let anchor = |j: usize, s: usize| anchors.data()[j * m + s];

    let mut resp = vec![0.0; heads * n * m];
    for h in 0..heads {
        for t in 0..n {
            let mut logits = vec![0.0; m];
            for (s, l) in logits.iter_mut().enumerate() {
                for j in 0..d {
                    *l += key(h, t, j) * anchor(j, s);
                }
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
            for s in 0..m {
                resp[(h * n + t) * m + s] = (logits[s] - top).exp() / z;
            }
        }
    }

    let mut norm = vec![0.0; heads * n * m];
    let mut means = vec![0.0; heads * m * d];
    for h in 0..heads {
        for s in 0..m {
            let mut mass = 0.0;
            for t in 0..n {
                mass += resp[(h * n + t) * m + s];
            }
            for t in 0..n {
                let w = resp[(h * n + t) * m + s] / (mass + eps);
                norm[(h * n + t) * m + s] = w;
                for j in 0..d {
                    means[(h * m + s) * d + j] += w * key(h, t, j);
                }
            }
        }
    }
    Ok(EmStep {
        a: Tensor::new(vec![heads, n, m], resp)?,
        a_hat: Tensor::new(vec![heads, n, m], norm)?,
        k_l: Tensor::new(vec![heads, m, d], means)?,
    })
}

/// Largest absolute difference between the layer's gather and the oracle
/// (over `A`, `Â` and `K_L`) for seeded Gaussian keys and anchors.
pub fn em_agreement(seed: u64, heads: usize, n: usize, d: usize, m: usize, eps: f64) -> Result<f64> {
    if heads == 0 || n == 0 || d == 0 || m == 0 {
        return Err(Error::config("EM check needs non-empty heads, tokens, dims and slots"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = Tensor::from_fn(&[heads, n, d], |_| StandardNormal.sample(&mut rng));
    let anchors = Tensor::from_fn(&[d, m], |_| StandardNormal.sample(&mut rng));
    let oracle = em_one_step_oracle(&keys, &anchors, eps)?;
    let k4 = keys.clone().reshape(&[1, heads, n, d])?;
    let a = gather_assign(&k4, &anchors)?;
    let (a_hat, _) = mass_normalize(&a, eps)?;
    let (k_l, _) = gather_latents(&a_hat, &k4, &k4)?;
    let diffs = [
        a.data().iter().zip(oracle.a.data()),
        a_hat.data().iter().zip(oracle.a_hat.data()),
        k_l.data().iter().zip(oracle.k_l.data()),
    ];
    Ok(diffs
        .into_iter()
        .flat_map(|pairs| pairs.map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max))
}
