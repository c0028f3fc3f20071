//! Reference mechanisms the representative layer is compared against.

pub mod kmeans;
pub mod pooled;
pub mod softmax;

use std::fmt;
use std::str::FromStr;

use crate::attention::{rpattention_forward, AttnConfig, RPAttnParams, Routing};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub use kmeans::{kmeans_fit, kmeans_gather, KmeansFit, DEFAULT_KMEANS_ITERS};
pub use pooled::{grid_pool, pooled_proxy_forward, PooledOutput};
pub use softmax::{softmax_attention_backward, softmax_attention_forward, softmax_attention_traced, DenseTrace, DenseWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    SoftmaxDense,
    PooledProxy,
    RpGatherDistribute,
    RpKmeansRouting,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::SoftmaxDense,
        BaselineKind::PooledProxy,
        BaselineKind::RpGatherDistribute,
        BaselineKind::RpKmeansRouting,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::SoftmaxDense => "softmax_dense",
            BaselineKind::PooledProxy => "pooled_proxy",
            BaselineKind::RpGatherDistribute => "rp_gather_distribute",
            BaselineKind::RpKmeansRouting => "rp_kmeans_routing",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown baseline {s:?}")))
    }
}

/// Config of the representative layer with the ablation for `kind` applied.
pub fn ablated_config(kind: BaselineKind, cfg: &AttnConfig, seed: u64) -> AttnConfig {
    let mut c = cfg.clone();
    match kind {
        BaselineKind::RpGatherDistribute => c.enable_interact = false,
        BaselineKind::RpKmeansRouting => {
            if c.routing == Routing::Learned {
                c.routing = Routing::Kmeans {
                    iters: DEFAULT_KMEANS_ITERS,
                    seed,
                };
            }
        }
        BaselineKind::SoftmaxDense | BaselineKind::PooledProxy => {}
    }
    c
}

/// Runs any baseline on `[B, N, C]` tokens with the projections of `params`.
/// The pooled proxy uses a `pool_grid` of cells.
pub fn baseline_forward<T: Real>(
    kind: BaselineKind,
    x: &Tensor<T>,
    params: &RPAttnParams<T>,
    cfg: &AttnConfig,
    pool_grid: (usize, usize),
) -> Result<Tensor<T>> {
    match kind {
        BaselineKind::SoftmaxDense => {
            cfg.check_input(x.shape())?;
            softmax_attention_forward(x, &params.w_q, &params.w_k, &params.w_v, &params.w_o, cfg.heads)
        }
        BaselineKind::PooledProxy => Ok(pooled_proxy_forward(x, params, cfg, pool_grid)?.y),
        BaselineKind::RpGatherDistribute | BaselineKind::RpKmeansRouting => {
            let c = ablated_config(kind, cfg, 0);
            Ok(rpattention_forward(x, params, &c)?.0)
        }
    }
}
