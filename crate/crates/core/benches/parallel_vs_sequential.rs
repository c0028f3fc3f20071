use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rpattn::baselines::softmax_attention_forward;
use rpattn::kernels::gemm;
use rpattn::{init_params, par, rpattention_forward, AttnConfig, Tensor};

const PATHS: [(&str, Option<usize>); 2] = [("parallel", None), ("sequential", Some(0))];

fn on_path<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => par::with_threads(t, f),
        None => f(),
    }
}

fn input(n: usize, c: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, n, c], |i| ((i * 7919 % 1009) as f32 / 1009.0) - 0.5)
}

fn bench_rpattention(c: &mut Criterion) {
    let mut group = c.benchmark_group("rpattention_forward");
    for &(gh, gw) in &[(32, 32), (64, 64)] {
        let cfg = AttnConfig::new(64, 4, 49, gh, gw);
        let params = init_params::<f32>(&cfg, 0).unwrap();
        let x = input(gh * gw, 64);
        for (name, threads) in PATHS {
            group.bench_with_input(BenchmarkId::new(name, gh * gw), &x, |b, x| {
                on_path(threads, || b.iter(|| black_box(rpattention_forward(x, &params, &cfg).unwrap())))
            });
        }
    }
    group.finish();
}

fn bench_dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("softmax_dense_forward");
    group.sample_size(10);
    let n = 1024;
    let cfg = AttnConfig::new(64, 4, 1, 32, 32);
    let p = init_params::<f32>(&cfg, 0).unwrap();
    let x = input(n, 64);
    for (name, threads) in PATHS {
        group.bench_function(BenchmarkId::new(name, n), |b| {
            on_path(threads, || {
                b.iter(|| black_box(softmax_attention_forward(&x, &p.w_q, &p.w_k, &p.w_v, &p.w_o, 4).unwrap()))
            })
        });
    }
    group.finish();
}

fn bench_gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    let s = 256;
    let a: Vec<f32> = (0..s * s).map(|i| (i % 13) as f32 * 0.1).collect();
    let b: Vec<f32> = (0..s * s).map(|i| (i % 7) as f32 * 0.1).collect();
    for (name, threads) in PATHS {
        group.bench_function(BenchmarkId::new(name, s), |bench| {
            on_path(threads, || {
                let mut out = vec![0.0f32; s * s];
                bench.iter(|| {
                    gemm(&a, false, &b, false, &mut out, s, s, s);
                    black_box(&out);
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_rpattention, bench_dense, bench_gemm);
criterion_main!(benches);
