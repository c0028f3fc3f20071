//! JSON configuration files. Every field is optional; missing fields take
//! the defaults below and unknown fields are rejected.

use serde::Deserialize;

use rpattn::analysis::{ShiftExperiment, ShiftMode};
use rpattn::harness::{AdamConfig, SyntheticTask, TrainConfig, Variant};
use rpattn::{AttnConfig, Routing};

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RoutingKind {
    #[default]
    Learned,
    Kmeans,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    pub channels: usize,
    pub heads: usize,
    pub num_representatives: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dwc_kernel: usize,
    pub epsilon: f64,
    pub ln_eps: f64,
    pub enable_interact: bool,
    pub enable_dwc: bool,
    pub routing: RoutingKind,
    pub kmeans_iters: usize,
    pub kmeans_seed: u64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            heads: 2,
            num_representatives: 3,
            grid_h: 3,
            grid_w: 4,
            dwc_kernel: 3,
            epsilon: 1e-6,
            ln_eps: 1e-5,
            enable_interact: true,
            enable_dwc: true,
            routing: RoutingKind::Learned,
            kmeans_iters: 3,
            kmeans_seed: 0,
        }
    }
}

impl LayerConfig {
    pub fn attn(&self) -> AttnConfig {
        let mut c = AttnConfig::new(self.channels, self.heads, self.num_representatives, self.grid_h, self.grid_w);
        c.dwc_kernel = self.dwc_kernel;
        c.epsilon = self.epsilon;
        c.ln_eps = self.ln_eps;
        c.enable_interact = self.enable_interact;
        c.enable_dwc = self.enable_dwc;
        if self.routing == RoutingKind::Kmeans {
            c.routing = Routing::Kmeans {
                iters: self.kmeans_iters,
                seed: self.kmeans_seed,
            };
        }
        c
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub layer: LayerConfig,
    pub seeds: Vec<u64>,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            layer: LayerConfig::default(),
            seeds: (0..5).collect(),
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopsConfig {
    pub n: u64,
    pub m: u64,
    pub c: u64,
    pub k: u64,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        Self { n: 196, m: 49, c: 192, k: 3 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub channels: usize,
    pub heads: usize,
    pub num_representatives: usize,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
    pub iters: usize,
    pub include_dense: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            heads: 2,
            num_representatives: 49,
            sizes: vec![256, 1024, 4096, 16384],
            reps: 3,
            warmup: 1,
            iters: 3,
            include_dense: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ShiftModeKind {
    #[default]
    ZeroFill,
    Wrap,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub channels: usize,
    pub heads: usize,
    pub pool_grid: [usize; 2],
    pub shifts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: ShiftModeKind,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        let e = ShiftExperiment::default();
        Self {
            image_size: e.image_size,
            in_channels: e.in_channels,
            patch: e.patch,
            channels: e.channels,
            heads: e.heads,
            pool_grid: [e.pool_grid.0, e.pool_grid.1],
            shifts: e.shifts,
            seeds: e.seeds,
            mode: ShiftModeKind::ZeroFill,
        }
    }
}

impl ShiftConfig {
    pub fn experiment(&self) -> ShiftExperiment {
        ShiftExperiment {
            image_size: self.image_size,
            in_channels: self.in_channels,
            patch: self.patch,
            channels: self.channels,
            heads: self.heads,
            pool_grid: (self.pool_grid[0], self.pool_grid[1]),
            shifts: self.shifts.clone(),
            seeds: self.seeds.clone(),
            mode: match self.mode {
                ShiftModeKind::ZeroFill => ShiftMode::ZeroFill,
                ShiftModeKind::Wrap => ShiftMode::Wrap,
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub in_channels: usize,
    pub clusters: usize,
    pub mean_scale: f64,
    pub sigma: f64,
    pub dominance: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let t = SyntheticTask::default();
        Self {
            grid_h: t.grid_h,
            grid_w: t.grid_w,
            in_channels: t.in_channels,
            clusters: t.clusters,
            mean_scale: t.mean_scale,
            sigma: t.sigma,
            dominance: t.dominance,
            seed: t.seed,
        }
    }
}

impl TaskConfig {
    pub fn task(&self) -> SyntheticTask {
        SyntheticTask {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            in_channels: self.in_channels,
            clusters: self.clusters,
            mean_scale: self.mean_scale,
            sigma: self.sigma,
            dominance: self.dominance,
            seed: self.seed,
            forced_cluster: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub task: TaskConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub channels: usize,
    pub heads: usize,
    pub num_representatives: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: String,
    /// Variants run by `ablate`.
    pub variants: Vec<String>,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            task: TaskConfig::default(),
            steps: t.steps,
            batch_size: t.batch_size,
            train_samples: t.train_samples,
            eval_samples: t.eval_samples,
            channels: t.channels,
            heads: t.heads,
            num_representatives: t.num_representatives,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            weight_decay: t.optimizer.weight_decay,
            seed: t.seed,
            variant: Variant::Full.tag().into(),
            variants: Variant::ALL.iter().map(|v| v.tag().to_string()).collect(),
        }
    }
}

impl TrainFileConfig {
    pub fn train_config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            train_samples: self.train_samples,
            eval_samples: self.eval_samples,
            channels: self.channels,
            heads: self.heads,
            num_representatives: self.num_representatives,
            optimizer: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            seed: self.seed,
            variant,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub trials: u64,
    pub heads: usize,
    pub tokens: usize,
    pub head_dim: usize,
    pub num_representatives: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            heads: 2,
            tokens: 12,
            head_dim: 4,
            num_representatives: 3,
            epsilon: 1e-6,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapsConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub channels: usize,
    pub heads: usize,
    pub num_representatives: usize,
    pub seed: u64,
}

impl Default for MapsConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            patch: 4,
            channels: 16,
            heads: 2,
            num_representatives: 4,
            seed: 0,
        }
    }
}
