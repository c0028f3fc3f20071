//! Lloyd's k-means with k-means++ seeding, used as a non-learned routing
//! alternative.
//!
//! Empty-cluster rule: after each update, empty clusters are visited in index
//! order and each is moved onto the point currently farthest from its own
//! centroid (lowest index wins ties); that point is then excluded for the
//! remaining empty clusters of the same round.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Default number of Lloyd rounds.
pub const DEFAULT_KMEANS_ITERS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansFit {
    /// Cluster index per point.
    pub assign: Vec<usize>,
    /// `m × d` centroids, row-major.
    pub centroids: Vec<f64>,
    /// Inertia after each assignment step: seeding, then every round.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &[f64], d: usize, centroids: &[f64], out: &mut [usize], dist: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.chunks(d).enumerate() {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centroids.chunks(d).enumerate() {
            let dd = sq_dist(p, c);
            if dd < best.1 {
                best = (j, dd);
            }
        }
        out[i] = best.0;
        dist[i] = best.1;
        inertia += best.1;
    }
    inertia
}

fn seed_plus_plus(points: &[f64], d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / d;
    let mut chosen = Vec::with_capacity(m);
    chosen.push(rng.random_range(0..n));
    let mut closest: Vec<f64> = points.chunks(d).map(|p| sq_dist(p, &points[chosen[0] * d..(chosen[0] + 1) * d])).collect();
    while chosen.len() < m {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        let c = &points[next * d..(next + 1) * d];
        for (w, p) in closest.iter_mut().zip(points.chunks(d)) {
            *w = w.min(sq_dist(p, c));
        }
    }
    chosen.iter().flat_map(|&i| points[i * d..(i + 1) * d].iter().copied()).collect()
}

/// Clusters `n × d` points into `m` groups with `iters` Lloyd rounds.
pub fn kmeans_fit(points: &[f64], d: usize, m: usize, iters: usize, rng: &mut ChaCha8Rng) -> Result<KmeansFit> {
    if d == 0 || points.is_empty() || !points.len().is_multiple_of(d) {
        return Err(Error::config("k-means needs a non-empty n x d point set"));
    }
    if m == 0 || iters == 0 {
        return Err(Error::config("k-means needs m >= 1 and iters >= 1"));
    }
    let n = points.len() / d;
    let mut centroids = seed_plus_plus(points, d, m, rng);
    let mut labels = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut inertia = vec![assign(points, d, &centroids, &mut labels, &mut dist)];
    for _ in 0..iters {
        let mut sums = vec![0.0; m * d];
        let mut counts = vec![0usize; m];
        for (p, &l) in points.chunks(d).zip(&labels) {
            counts[l] += 1;
            sums[l * d..(l + 1) * d].iter_mut().zip(p).for_each(|(s, &v)| *s += v);
        }
        for j in 0..m {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, &s) in centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                    *c = s * inv;
                }
            }
        }
        // distances to the updated centroids decide the re-seed targets
        for (i, p) in points.chunks(d).enumerate() {
            dist[i] = sq_dist(p, &centroids[labels[i] * d..(labels[i] + 1) * d]);
        }
        for j in (0..m).filter(|&j| counts[j] == 0) {
            let far = dist
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            centroids[j * d..(j + 1) * d].copy_from_slice(&points[far * d..(far + 1) * d]);
            dist[far] = f64::NEG_INFINITY;
        }
        inertia.push(assign(points, d, &centroids, &mut labels, &mut dist));
    }
    Ok(KmeansFit {
        assign: labels,
        centroids,
        inertia,
    })
}

/// Random stream for one `(batch, head)` pair, independent of visiting order.
pub fn head_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hard one-hot assignments `[B, h, N, M]` from k-means on each head's keys.
pub fn kmeans_gather<T: Real>(k: &Tensor<T>, m: usize, iters: usize, seed: u64) -> Result<Tensor<T>> {
    let &[b, h, n, d] = k.shape() else {
        return Err(Error::shape("kmeans_gather", k.shape(), &[0, 0, 0, 0]));
    };
    let fits = par::map_indices(b * h, |bh| {
        let pts: Vec<f64> = k.data()[bh * n * d..(bh + 1) * n * d].iter().map(|&v| Real::to_f64(v)).collect();
        kmeans_fit(&pts, d, m, iters, &mut head_rng(seed, bh as u64))
    });
    let mut out = vec![T::zero(); b * h * n * m];
    for (bh, fit) in fits.into_iter().enumerate() {
        for (i, &l) in fit?.assign.iter().enumerate() {
            out[(bh * n + i) * m + l] = T::one();
        }
    }
    Tensor::new(vec![b, h, n, m], out)
}
