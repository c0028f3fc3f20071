//! Closed-form cost model.
//!
//! Terms follow the layer's dominant-cost expression literally
//! (`4NC² + 3NMC + 2M²C + 2NMC + k²NC`): each coefficient counts
//! multiply-accumulate pairs, not separate multiplies and adds. Lower-order
//! terms such as the latent QKV projection are left out.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopsBreakdown {
    pub proj: u128,
    pub gather: u128,
    pub interaction: u128,
    pub distribute: u128,
    pub dwc: u128,
    pub total: u128,
}

impl FlopsBreakdown {
    pub const CSV_HEADER: &'static str = "n,m,c,k,proj,gather,interaction,distribute,dwc,total";
}

fn mul(terms: &[u64]) -> Result<u128> {
    terms
        .iter()
        .try_fold(1u128, |acc, &t| acc.checked_mul(t as u128))
        .ok_or(Error::Overflow("flops term"))
}

fn positive(vals: &[(&str, u64)]) -> Result<()> {
    match vals.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(Error::config(format!("{name} must be positive"))),
        None => Ok(()),
    }
}

/// Per-stage cost of one layer on `n` tokens, `m` slots, `c` channels and
/// a `k×k` depth-wise kernel.
pub fn flops_estimate(n: u64, m: u64, c: u64, k: u64) -> Result<FlopsBreakdown> {
    positive(&[("N", n), ("M", m), ("C", c), ("k", k)])?;
    let proj = mul(&[4, n, c, c])?;
    let gather = mul(&[3, n, m, c])?;
    let interaction = mul(&[2, m, m, c])?;
    let distribute = mul(&[2, n, m, c])?;
    let dwc = mul(&[k, k, n, c])?;
    let total = [gather, interaction, distribute, dwc]
        .iter()
        .try_fold(proj, |acc, &t| acc.checked_add(t))
        .ok_or(Error::Overflow("flops total"))?;
    Ok(FlopsBreakdown {
        proj,
        gather,
        interaction,
        distribute,
        dwc,
        total,
    })
}

/// Dense softmax attention: `4NC²` projections plus `2N²C` for scores and readout.
pub fn softmax_flops(n: u64, c: u64) -> Result<u128> {
    positive(&[("N", n), ("C", c)])?;
    mul(&[4, n, c, c])?
        .checked_add(mul(&[2, n, n, c])?)
        .ok_or(Error::Overflow("softmax flops"))
}

/// Smallest `N ≤ limit` where dense attention costs more than the
/// representative layer, by linear scan.
pub fn crossover_n(m: u64, c: u64, k: u64, limit: u64) -> Result<Option<u64>> {
    for n in 1..=limit {
        if softmax_flops(n, c)? > flops_estimate(n, m, c, k)?.total {
            return Ok(Some(n));
        }
    }
    Ok(None)
}
