//! Tiny classifier around one attention layer, trained with Adam on the
//! synthetic task.
//!
//! `tokens → W_in → attention → mean over tokens → W_h, b_h → cross-entropy`

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::synthetic::{SyntheticData, SyntheticTask};
use crate::attention::{init_params, rpattention_forward, AttnConfig, RPAttnParams, Routing};
use crate::baselines::{softmax_attention_backward, softmax_attention_traced, DenseWeights, DEFAULT_KMEANS_ITERS};
use crate::error::{Error, Result};
use crate::grad::rpattention_backward;
use crate::kernels::{gemm, linear};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    GatherDistribute,
    Kmeans,
    SoftmaxBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::GatherDistribute, Variant::Kmeans, Variant::SoftmaxBaseline];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::GatherDistribute => "gather_distribute",
            Variant::Kmeans => "kmeans",
            Variant::SoftmaxBaseline => "softmax_baseline",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub channels: usize,
    pub heads: usize,
    pub num_representatives: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            train_samples: 128,
            eval_samples: 256,
            channels: 16,
            heads: 2,
            num_representatives: 4,
            optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    /// Attention config for `task`'s grid with this variant's ablation.
    pub fn attn_config(&self, task: &SyntheticTask) -> AttnConfig {
        let mut cfg = AttnConfig::new(self.channels, self.heads, self.num_representatives, task.grid_h, task.grid_w);
        match self.variant {
            Variant::GatherDistribute => cfg.enable_interact = false,
            Variant::Kmeans => {
                cfg.routing = Routing::Kmeans {
                    iters: DEFAULT_KMEANS_ITERS,
                    seed: self.seed,
                }
            }
            Variant::Full | Variant::SoftmaxBaseline => {}
        }
        cfg
    }

    pub fn validate(&self, task: &SyntheticTask) -> Result<()> {
        task.validate()?;
        self.attn_config(task).validate()?;
        self.optimizer.validate()?;
        if self.steps == 0 {
            return Err(Error::config("training needs at least one step"));
        }
        if self.batch_size == 0 || self.train_samples == 0 {
            return Err(Error::config("batch size and training set must be non-empty"));
        }
        Ok(())
    }
}

/// Trainable weights; `grads` returns the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyModel {
    pub embed: Tensor<f64>,
    pub attn: RPAttnParams<f64>,
    pub head_w: Tensor<f64>,
    pub head_b: Tensor<f64>,
}

impl TinyModel {
    pub fn init(task: &SyntheticTask, cfg: &AttnConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let (cin, c, g) = (task.in_channels, cfg.channels, task.clusters);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-a..a))
        };
        Ok(Self {
            embed: uniform(&[cin, c], cin),
            head_w: uniform(&[c, g], c),
            head_b: Tensor::zeros(&[g]),
            attn: init_params(cfg, seed)?,
        })
    }

    fn zeros_like(&self, cfg: &AttnConfig) -> Self {
        Self {
            embed: Tensor::zeros(self.embed.shape()),
            attn: RPAttnParams::zeros(cfg),
            head_w: Tensor::zeros(self.head_w.shape()),
            head_b: Tensor::zeros(self.head_b.shape()),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<f64>> {
        let mut v = vec![&self.embed];
        v.extend(self.attn.fields().into_iter().map(|(_, t)| t));
        v.extend([&self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        let mut v = vec![&mut self.embed];
        v.extend(self.attn.fields_mut().into_iter().map(|(_, t)| t));
        v.extend([&mut self.head_w, &mut self.head_b]);
        v
    }

    fn dense(&self) -> DenseWeights<f64> {
        DenseWeights {
            w_q: self.attn.w_q.clone(),
            w_k: self.attn.w_k.clone(),
            w_v: self.attn.w_v.clone(),
            w_o: self.attn.w_o.clone(),
        }
    }

    fn attend(&self, e: &Tensor<f64>, cfg: &AttnConfig, variant: Variant) -> Result<Tensor<f64>> {
        if variant == Variant::SoftmaxBaseline {
            return Ok(softmax_attention_traced(e, &self.dense(), cfg.heads)?.0);
        }
        Ok(rpattention_forward(e, &self.attn, cfg)?.0)
    }

    /// Class logits `[B, G]`.
    pub fn logits(&self, x: &Tensor<f64>, cfg: &AttnConfig, variant: Variant) -> Result<Tensor<f64>> {
        let e = linear(x, &self.embed, None)?;
        let y = self.attend(&e, cfg, variant)?;
        linear(&mean_tokens(&y)?, &self.head_w, Some(&self.head_b))
    }

    /// Mean cross-entropy over the batch and its gradient for every weight.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<f64>,
        labels: &[usize],
        cfg: &AttnConfig,
        variant: Variant,
    ) -> Result<(f64, TinyModel)> {
        let &[b, n, cin] = x.shape() else {
            return Err(Error::shape("tiny_model", x.shape(), &[0, 0, 0]));
        };
        if labels.len() != b {
            return Err(Error::Contract(format!("{} labels for a batch of {b}", labels.len())));
        }
        let (c, g) = (cfg.channels, self.head_b.len());
        let e = linear(x, &self.embed, None)?;
        let mut grads = self.zeros_like(cfg);
        let dense = self.dense();
        enum Trace {
            Rp(Box<crate::attention::ForwardTrace<f64>>),
            Dense(Box<crate::baselines::DenseTrace<f64>>),
        }
        let (y, trace) = if variant == Variant::SoftmaxBaseline {
            let (y, t) = softmax_attention_traced(&e, &dense, cfg.heads)?;
            (y, Trace::Dense(Box::new(t)))
        } else {
            let (y, t) = rpattention_forward(&e, &self.attn, cfg)?;
            (y, Trace::Rp(Box::new(t)))
        };
        let pooled = mean_tokens(&y)?;
        let logits = linear(&pooled, &self.head_w, Some(&self.head_b))?;

        let mut loss = 0.0;
        let mut d_logits = vec![0.0; b * g];
        for (i, row) in logits.data().chunks(g).enumerate() {
            if labels[i] >= g {
                return Err(Error::Contract(format!("label {} out of range", labels[i])));
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            for (j, &v) in row.iter().enumerate() {
                let p = (v - lse).exp();
                d_logits[i * g + j] = (p - f64::from(u8::from(j == labels[i]))) / b as f64;
            }
        }
        loss /= b as f64;

        gemm(pooled.data(), true, &d_logits, false, grads.head_w.data_mut(), c, b, g);
        for row in d_logits.chunks(g) {
            grads.head_b.data_mut().iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        let mut d_pooled = vec![0.0; b * c];
        gemm(&d_logits, false, self.head_w.data(), true, &mut d_pooled, b, g, c);
        let inv_n = 1.0 / n as f64;
        let d_y = Tensor::from_fn(&[b, n, c], |i| d_pooled[(i / (n * c)) * c + i % c] * inv_n);

        let d_e = match trace {
            Trace::Rp(t) => {
                let gs = rpattention_backward(&t, &d_y, &self.attn, cfg)?;
                grads.attn = gs.params;
                gs.x
            }
            Trace::Dense(t) => {
                let (dw, dx) = softmax_attention_backward(&t, &d_y, &dense)?;
                grads.attn.w_q = dw.w_q;
                grads.attn.w_k = dw.w_k;
                grads.attn.w_v = dw.w_v;
                grads.attn.w_o = dw.w_o;
                dx
            }
        };
        gemm(x.data(), true, d_e.data(), false, grads.embed.data_mut(), cin, b * n, c);
        Ok((loss, grads))
    }
}

fn mean_tokens(y: &Tensor<f64>) -> Result<Tensor<f64>> {
    let &[b, n, c] = y.shape() else {
        return Err(Error::shape("mean_tokens", y.shape(), &[0, 0, 0]));
    };
    let mut out = vec![0.0; b * c];
    for (i, row) in y.data().chunks(c).enumerate() {
        out[(i / n) * c..(i / n + 1) * c]
            .iter_mut()
            .zip(row)
            .for_each(|(o, &v)| *o += v);
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    Tensor::new(vec![b, c], out)
}

fn select(data: &SyntheticData, idx: &[usize]) -> Result<(Tensor<f64>, Vec<usize>)> {
    let &[_, n, cin] = data.tokens.shape() else {
        unreachable!("synthetic tokens are rank 3")
    };
    let per = n * cin;
    let mut out = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        out.extend_from_slice(&data.tokens.data()[i * per..(i + 1) * per]);
    }
    Ok((Tensor::new(vec![idx.len(), n, cin], out)?, idx.iter().map(|&i| data.labels[i]).collect()))
}

fn accuracy(model: &TinyModel, data: &SyntheticData, cfg: &AttnConfig, variant: Variant) -> Result<f64> {
    let total = data.labels.len();
    if total == 0 {
        return Ok(0.0);
    }
    let mut correct = 0;
    for start in (0..total).step_by(64) {
        let idx: Vec<usize> = (start..total.min(start + 64)).collect();
        let (x, labels) = select(data, &idx)?;
        let logits = model.logits(&x, cfg, variant)?;
        let g = logits.last_dim();
        for (row, &l) in logits.data().chunks(g).zip(&labels) {
            let arg = (0..g).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            correct += usize::from(arg == l);
        }
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub variant: Variant,
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// `step,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:.12e}\n"));
        }
        s
    }
}

/// Trains from scratch. Mini-batches walk the training set in order,
/// wrapping around; a batch at least as large as the set uses every sample
/// each step. Any non-finite loss aborts the run.
pub fn train(task: &SyntheticTask, cfg: &TrainConfig) -> Result<(TinyModel, TrainReport)> {
    cfg.validate(task)?;
    let attn = cfg.attn_config(task);
    let train_set = task.generate(cfg.train_samples, 0)?;
    let eval_set = task.generate(cfg.eval_samples, 1)?;
    let mut model = TinyModel::init(task, &attn, cfg.seed)?;
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(cfg.optimizer, &sizes)?;
    let bs = cfg.batch_size.min(cfg.train_samples);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..bs).map(|j| (step * bs + j) % cfg.train_samples).collect();
        let (x, labels) = select(&train_set, &idx)?;
        let (loss, grads) = model.loss_and_grads(&x, &labels, &attn, cfg.variant)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        losses.push(loss);
        opt.step(&mut model.tensors_mut(), &grads.tensors())?;
    }
    let report = TrainReport {
        variant: cfg.variant,
        losses,
        train_accuracy: accuracy(&model, &train_set, &attn, cfg.variant)?,
        eval_accuracy: accuracy(&model, &eval_set, &attn, cfg.variant)?,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_grad;

    fn tiny() -> (SyntheticTask, TrainConfig) {
        let task = SyntheticTask {
            grid_h: 2,
            grid_w: 3,
            in_channels: 3,
            clusters: 3,
            ..Default::default()
        };
        let cfg = TrainConfig {
            channels: 4,
            heads: 2,
            num_representatives: 2,
            train_samples: 4,
            batch_size: 4,
            ..Default::default()
        };
        (task, cfg)
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let (task, base) = tiny();
        for variant in Variant::ALL {
            let cfg = TrainConfig { variant, ..base.clone() };
            let attn = cfg.attn_config(&task);
            let model = TinyModel::init(&task, &attn, 3).unwrap();
            let data = task.generate(3, 0).unwrap();
            let (_, grads) = model.loss_and_grads(&data.tokens, &data.labels, &attn, variant).unwrap();
            let analytic = grads.tensors();
            for (k, t) in model.tensors().into_iter().enumerate() {
                let numeric = finite_diff_grad(
                    |probe| {
                        let mut m = model.clone();
                        *m.tensors_mut()[k] = probe.clone();
                        m.loss_and_grads(&data.tokens, &data.labels, &attn, variant).unwrap().0
                    },
                    t,
                    1e-6,
                )
                .unwrap();
                let err = analytic[k].max_abs_diff(&numeric);
                assert!(err < 1e-7, "{variant} tensor {k}: {err}");
            }
        }
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let (task, mut cfg) = tiny();
        cfg.steps = 4;
        cfg.optimizer.lr = 0.0;
        assert!(train(&task, &TrainConfig { steps: 0, ..cfg.clone() }).is_err());
        let (_, r) = train(&task, &cfg).unwrap();
        assert!(r.losses.iter().all(|&l| l == r.losses[0]));
    }

    #[test]
    fn runs_are_bit_identical() {
        let (task, mut cfg) = tiny();
        cfg.steps = 5;
        cfg.variant = Variant::Kmeans;
        let a = train(&task, &cfg).unwrap();
        let b = train(&task, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variant_tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        }
        assert!("dense".parse::<Variant>().is_err());
    }
}
