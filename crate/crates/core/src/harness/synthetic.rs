//! Synthetic token-clustering classification task.
//!
//! Each sample is a grid of tokens. A dominant cluster is drawn per sample;
//! every token comes from the dominant cluster with probability `dominance`
//! and from a uniformly random cluster otherwise, then gets Gaussian noise
//! added to its cluster mean. The label is the most frequent cluster among
//! the sample's tokens (ties go to the lowest index).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub grid_h: usize,
    pub grid_w: usize,
    pub in_channels: usize,
    pub clusters: usize,
    /// Standard deviation of the cluster means around the origin.
    pub mean_scale: f64,
    /// Token noise around its cluster mean.
    pub sigma: f64,
    pub dominance: f64,
    pub seed: u64,
    /// Pins every sample's dominant cluster; used for degenerate checks.
    pub forced_cluster: Option<usize>,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            grid_h: 4,
            grid_w: 4,
            in_channels: 4,
            clusters: 4,
            mean_scale: 1.0,
            sigma: 0.3,
            dominance: 0.5,
            seed: 0,
            forced_cluster: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    /// `[S, N, C_in]`.
    pub tokens: Tensor<f64>,
    pub labels: Vec<usize>,
    /// Cluster index of every token, `S × N`.
    pub token_clusters: Vec<usize>,
    /// `clusters × C_in`.
    pub means: Vec<Vec<f64>>,
}

/// Most frequent value in `ids` below `g`, lowest index on ties.
pub fn majority(ids: &[usize], g: usize) -> usize {
    let mut counts = vec![0usize; g];
    for &i in ids {
        counts[i] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl SyntheticTask {
    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(Error::config("synthetic task needs at least two clusters"));
        }
        if self.tokens() == 0 || self.in_channels == 0 {
            return Err(Error::config("synthetic task needs a non-empty grid and channels"));
        }
        if !(self.sigma >= 0.0) || !(self.mean_scale > 0.0) || !(0.0..=1.0).contains(&self.dominance) {
            return Err(Error::config("synthetic task noise/dominance out of range"));
        }
        if self.forced_cluster.is_some_and(|c| c >= self.clusters) {
            return Err(Error::config("forced cluster out of range"));
        }
        Ok(())
    }

    /// Cluster means; depend on `seed` only.
    pub fn means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dist = Normal::new(0.0, self.mean_scale).expect("positive scale");
        (0..self.clusters)
            .map(|_| (0..self.in_channels).map(|_| dist.sample(&mut rng)).collect())
            .collect()
    }

    /// Draws `samples` examples. `split` selects an independent stream over
    /// the same cluster means (e.g. 0 for training, 1 for evaluation).
    pub fn generate(&self, samples: usize, split: u64) -> Result<SyntheticData> {
        self.validate()?;
        let means = self.means();
        let (n, cin, g) = (self.tokens(), self.in_channels, self.clusters);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split + 1);
        let noise = Normal::new(0.0, self.sigma.max(f64::MIN_POSITIVE)).expect("non-negative sigma");
        let mut data = Vec::with_capacity(samples * n * cin);
        let mut labels = Vec::with_capacity(samples);
        let mut token_clusters = Vec::with_capacity(samples * n);
        for _ in 0..samples {
            let dominant = self.forced_cluster.unwrap_or_else(|| rng.random_range(0..g));
            let ids: Vec<usize> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < self.dominance {
                        dominant
                    } else {
                        rng.random_range(0..g)
                    }
                })
                .collect();
            for &id in &ids {
                for &mu in &means[id] {
                    let e = if self.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(mu + e);
                }
            }
            labels.push(majority(&ids, g));
            token_clusters.extend(ids);
        }
        Ok(SyntheticData {
            tokens: Tensor::new(vec![samples, n, cin], data)?,
            labels,
            token_clusters,
            means,
        })
    }
}
