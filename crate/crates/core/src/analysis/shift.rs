//! Translation robustness of latent tokens.
//!
//! An image is translated horizontally, patch-embedded, and the latent
//! values of the representative gather and of the grid-pooled proxies are
//! compared with those of the untranslated image by cosine similarity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{gather_latents, mass_normalize, project_qkv, route, AttnConfig, RPAttnParams};
use crate::baselines::grid_pool;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ShiftMode {
    /// Vacated pixels become zero.
    #[default]
    ZeroFill,
    /// Pixels leaving one edge re-enter on the other.
    Wrap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    pub shifts: Vec<usize>,
    pub cosine_rp: Vec<f64>,
    pub cosine_pooled: Vec<f64>,
}

impl ShiftReport {
    /// Random-init weights, latent values compared; the header says so.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# latents=V_L weights=random-init\nshift,cosine_rp,cosine_pooled\n");
        for ((sh, a), b) in self.shifts.iter().zip(&self.cosine_rp).zip(&self.cosine_pooled) {
            s.push_str(&format!("{sh},{a:.9},{b:.9}\n"));
        }
        s
    }

    /// Element-wise mean of several reports over the same shifts.
    pub fn mean(reports: &[ShiftReport]) -> Result<ShiftReport> {
        let first = reports.first().ok_or_else(|| Error::config("no reports to average"))?;
        if reports.iter().any(|r| r.shifts != first.shifts) {
            return Err(Error::config("reports cover different shifts"));
        }
        let k = reports.len() as f64;
        let avg = |f: fn(&ShiftReport) -> &Vec<f64>| -> Vec<f64> {
            (0..first.shifts.len())
                .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / k)
                .collect()
        };
        Ok(ShiftReport {
            shifts: first.shifts.clone(),
            cosine_rp: avg(|r| &r.cosine_rp),
            cosine_pooled: avg(|r| &r.cosine_pooled),
        })
    }
}

/// Translates an `[H, W, C]` image right by `dx` pixels.
pub fn translate_image(image: &Tensor<f64>, dx: usize, mode: ShiftMode) -> Result<Tensor<f64>> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::shape("translate_image", image.shape(), &[0, 0, 0]));
    };
    if dx >= w {
        return Err(Error::config(format!("shift {dx} not smaller than image width {w}")));
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    for i in 0..h {
        for j in 0..w {
            let src = match (j.checked_sub(dx), mode) {
                (Some(s), _) => s,
                (None, ShiftMode::Wrap) => j + w - dx,
                (None, ShiftMode::ZeroFill) => continue,
            };
            let (d0, s0) = ((i * w + j) * c, (i * w + src) * c);
            out.data_mut()[d0..d0 + c].copy_from_slice(&image.data()[s0..s0 + c]);
        }
    }
    Ok(out)
}

/// Non-overlapping `p×p` patches flattened in `(row, col, channel)` order
/// and projected by `embed` (`[p·p·C_in, C]`); returns `[1, N, C]`.
pub fn patch_embed(image: &Tensor<f64>, embed: &Tensor<f64>, patch: usize) -> Result<Tensor<f64>> {
    let &[h, w, cin] = image.shape() else {
        return Err(Error::shape("patch_embed", image.shape(), &[0, 0, 0]));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::config(format!("{h}x{w} image not divisible into {patch}x{patch} patches")));
    }
    let flat = patch * patch * cin;
    if embed.ndim() != 2 || embed.shape()[0] != flat {
        return Err(Error::shape("patch_embed", &[flat], embed.shape()));
    }
    let c = embed.shape()[1];
    let (gh, gw) = (h / patch, w / patch);
    let mut out = vec![0.0; gh * gw * c];
    for pi in 0..gh {
        for pj in 0..gw {
            let tok = &mut out[(pi * gw + pj) * c..(pi * gw + pj + 1) * c];
            let mut f = 0;
            for u in 0..patch {
                for v in 0..patch {
                    for ch in 0..cin {
                        let px = image.data()[((pi * patch + u) * w + pj * patch + v) * cin + ch];
                        if px != 0.0 {
                            let row = &embed.data()[f * c..(f + 1) * c];
                            tok.iter_mut().zip(row).for_each(|(t, &e)| *t += px * e);
                        }
                        f += 1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![1, gh * gw, c], out)
}

/// Seeded `U(±1/√fan_in)` patch-embedding matrix.
pub fn init_patch_embed(patch: usize, in_channels: usize, channels: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = patch * patch * in_channels;
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(&[fan_in, channels], |_| rng.random_range(-bound..bound))
}

/// Random axis-aligned coloured rectangles on a zero background. No
/// rectangle reaches the rightmost `margin` columns, so zero-fill shifts up
/// to `margin` pixels lose no content.
pub fn structured_image(h: usize, w: usize, channels: usize, margin: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Tensor::zeros(&[h, w, channels]);
    let usable = w.saturating_sub(margin).max(2);
    for _ in 0..4 {
        let rh = rng.random_range(2..=(h / 3).max(2));
        let rw = rng.random_range(2..=(usable / 3).max(2));
        let top = rng.random_range(0..=h - rh);
        let left = rng.random_range(0..=usable - rw);
        let colour: Vec<f64> = (0..channels).map(|_| rng.random_range(0.2..1.0)).collect();
        for i in top..top + rh {
            for j in left..left + rw {
                let o = (i * w + j) * channels;
                img.data_mut()[o..o + channels].copy_from_slice(&colour);
            }
        }
    }
    img
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Latent values `[1, h, M, d]` of the representative gather.
pub fn rp_latent_values(tokens: &Tensor<f64>, params: &RPAttnParams<f64>, cfg: &AttnConfig) -> Result<Tensor<f64>> {
    let (_, k, v) = project_qkv(tokens, params, cfg)?;
    let a = route(&k, params, cfg)?;
    let (a_hat, _) = mass_normalize(&a, cfg.epsilon)?;
    Ok(gather_latents(&a_hat, &k, &v)?.1)
}

/// Latent values `[1, h, g_h·g_w, d]` of the pooled proxy.
pub fn pooled_latent_values(
    tokens: &Tensor<f64>,
    params: &RPAttnParams<f64>,
    cfg: &AttnConfig,
    pool_grid: (usize, usize),
) -> Result<Tensor<f64>> {
    let (_, _, v) = project_qkv(tokens, params, cfg)?;
    grid_pool(&v, (cfg.grid_h, cfg.grid_w), pool_grid)
}

/// Everything the shift experiment needs besides the image.
#[derive(Clone, Debug)]
pub struct ShiftSetup<'a> {
    pub cfg: &'a AttnConfig,
    pub embed: &'a Tensor<f64>,
    pub patch: usize,
    pub pool_grid: (usize, usize),
    pub mode: ShiftMode,
}

/// Cosine similarity of latents under each shift against shift 0.
pub fn shift_robustness(
    image: &Tensor<f64>,
    params_rp: &RPAttnParams<f64>,
    params_pooled: &RPAttnParams<f64>,
    setup: &ShiftSetup<'_>,
    shifts: &[usize],
) -> Result<ShiftReport> {
    if shifts.first() != Some(&0) {
        return Err(Error::config("shifts must start at 0"));
    }
    let &[h, w, _] = image.shape() else {
        return Err(Error::shape("shift_robustness", image.shape(), &[0, 0, 0]));
    };
    let max = shifts.iter().copied().max().unwrap_or(0);
    if max >= w || max >= h {
        return Err(Error::config(format!("shift {max} does not fit a {h}x{w} image")));
    }
    let latents = |s: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let img = translate_image(image, s, setup.mode)?;
        let tokens = patch_embed(&img, setup.embed, setup.patch)?;
        let rp = rp_latent_values(&tokens, params_rp, setup.cfg)?;
        let pooled = pooled_latent_values(&tokens, params_pooled, setup.cfg, setup.pool_grid)?;
        Ok((rp.into_data(), pooled.into_data()))
    };
    let (rp0, pool0) = latents(0)?;
    let mut report = ShiftReport {
        shifts: shifts.to_vec(),
        cosine_rp: Vec::with_capacity(shifts.len()),
        cosine_pooled: Vec::with_capacity(shifts.len()),
    };
    for &s in shifts {
        let (rp, pooled) = latents(s)?;
        report.cosine_rp.push(cosine(&rp0, &rp));
        report.cosine_pooled.push(cosine(&pool0, &pooled));
    }
    Ok(report)
}

/// Parameters of the shift study, seeded per run.
#[derive(Clone, Debug)]
pub struct ShiftExperiment {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub channels: usize,
    pub heads: usize,
    pub pool_grid: (usize, usize),
    pub shifts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: ShiftMode,
}

impl Default for ShiftExperiment {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            patch: 4,
            channels: 16,
            heads: 2,
            pool_grid: (2, 2),
            shifts: (0..=8).collect(),
            seeds: (0..5).collect(),
            mode: ShiftMode::ZeroFill,
        }
    }
}

impl ShiftExperiment {
    pub fn attn_config(&self) -> AttnConfig {
        let g = self.image_size / self.patch.max(1);
        AttnConfig::new(self.channels, self.heads, self.pool_grid.0 * self.pool_grid.1, g, g)
    }

    /// Runs one seed: fresh image, embedding and layer weights. The pooled
    /// proxy shares the projections of the representative layer.
    pub fn run_seed(&self, seed: u64) -> Result<ShiftReport> {
        let cfg = self.attn_config();
        let max = self.shifts.iter().copied().max().unwrap_or(0);
        let image = structured_image(self.image_size, self.image_size, self.in_channels, max, seed);
        let embed = init_patch_embed(self.patch, self.in_channels, self.channels, seed.wrapping_add(1));
        let params = crate::attention::init_params(&cfg, seed.wrapping_add(2))?;
        let setup = ShiftSetup {
            cfg: &cfg,
            embed: &embed,
            patch: self.patch,
            pool_grid: self.pool_grid,
            mode: self.mode,
        };
        shift_robustness(&image, &params, &params, &setup, &self.shifts)
    }

    /// Mean report over all seeds.
    pub fn run(&self) -> Result<ShiftReport> {
        let reports = crate::par::map_indices(self.seeds.len(), |i| self.run_seed(self.seeds[i]));
        let reports: Result<Vec<_>> = reports.into_iter().collect();
        ShiftReport::mean(&reports?)
    }
}
