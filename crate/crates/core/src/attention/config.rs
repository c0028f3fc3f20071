use crate::error::{Error, Result};

/// How spatial tokens are assigned to representatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    /// Softmax over key · anchor logits with learned anchors.
    Learned,
    /// Hard k-means clustering of the keys; assignments carry no gradient.
    Kmeans { iters: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Hyperparameters of one representative-attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnConfig {
    pub channels: usize,
    pub heads: usize,
    pub num_representatives: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dwc_kernel: usize,
    /// Guard added to every slot mass before normalization.
    pub epsilon: f64,
    /// Layer-norm epsilon for the latent keys and values.
    pub ln_eps: f64,
    pub enable_interact: bool,
    pub enable_dwc: bool,
    pub routing: Routing,
    pub precision: Precision,
}

impl AttnConfig {
    pub fn new(channels: usize, heads: usize, num_representatives: usize, grid_h: usize, grid_w: usize) -> Self {
        Self {
            channels,
            heads,
            num_representatives,
            grid_h,
            grid_w,
            dwc_kernel: 3,
            epsilon: 1e-6,
            ln_eps: 1e-5,
            enable_interact: true,
            enable_dwc: true,
            routing: Routing::Learned,
            precision: Precision::F64,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 {
            return Err(Error::config("channels and heads must be positive"));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.num_representatives == 0 {
            return Err(Error::config("num_representatives must be at least 1"));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        if self.dwc_kernel == 0 || self.dwc_kernel.is_multiple_of(2) {
            return Err(Error::config(format!("dwc kernel {} must be odd", self.dwc_kernel)));
        }
        if !(self.epsilon > 0.0) || !(self.ln_eps > 0.0) {
            return Err(Error::config("epsilon values must be positive"));
        }
        if let Routing::Kmeans { iters, .. } = self.routing {
            if iters == 0 {
                return Err(Error::config("k-means needs at least one iteration"));
            }
        }
        Ok(())
    }

    /// Checks an input shape `[B, N, C]` against this config.
    pub fn check_input(&self, shape: &[usize]) -> Result<usize> {
        let &[b, n, c] = shape else {
            return Err(Error::shape("input", shape, &[0, self.tokens(), self.channels]));
        };
        if b == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if n != self.tokens() {
            return Err(Error::config(format!(
                "{n} tokens do not match grid {}x{}",
                self.grid_h, self.grid_w
            )));
        }
        if c != self.channels {
            return Err(Error::shape("input", shape, &[b, n, self.channels]));
        }
        Ok(b)
    }
}
