use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fundus_core::metrics::{auc, ScoredSet};
use fundus_core::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn scored(n: usize, rng: &mut ChaCha8Rng) -> ScoredSet {
    let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let scores = labels.iter().map(|&l| rng.random::<f64>() + if l { 0.4 } else { 0.0 }).collect();
    ScoredSet::new(scores, labels).unwrap()
}

fn bootstrap_rep(s: &ScoredSet, rep: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rep as u64);
    let n = s.len();
    loop {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let labels: Vec<bool> = idx.iter().map(|&i| s.labels[i]).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let scores = idx.iter().map(|&i| s.scores[i]).collect();
            return auc(&ScoredSet::new(scores, labels).unwrap()).unwrap();
        }
    }
}

fn conv_plane(input: &[f32], w: usize, k: usize) -> f32 {
    let h = input.len() / w;
    let mut acc = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut s = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    s += input[(y + dy - 1) * w + x + dx - 1] * ((k + dy * 3 + dx) % 5) as f32;
                }
            }
            acc += s.max(0.0);
        }
    }
    acc
}

fn bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let set = scored(500, &mut rng);
    let mut g = c.benchmark_group("bootstrap_auc");
    for reps in [200usize, 1000] {
        g.bench_with_input(BenchmarkId::new("par", reps), &reps, |b, &r| {
            b.iter(|| par::map_range(r, |i| bootstrap_rep(black_box(&set), i)))
        });
        g.bench_with_input(BenchmarkId::new("seq", reps), &reps, |b, &r| {
            b.iter(|| par::seq::map_range(r, |i| bootstrap_rep(black_box(&set), i)))
        });
    }
    g.finish();

    let plane: Vec<f32> = (0..128 * 128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = c.benchmark_group("conv3x3_channels");
    for ch in [16usize, 64] {
        g.bench_with_input(BenchmarkId::new("par", ch), &ch, |b, &n| {
            b.iter(|| par::map_range(n, |k| conv_plane(black_box(&plane), 128, k)))
        });
        g.bench_with_input(BenchmarkId::new("seq", ch), &ch, |b, &n| {
            b.iter(|| par::seq::map_range(n, |k| conv_plane(black_box(&plane), 128, k)))
        });
    }
    g.finish();

    let points: Vec<Vec<f64>> = (0..400).map(|_| (0..64).map(|_| rng.random::<f64>()).collect()).collect();
    let row = |i: usize| -> Vec<f64> {
        points.iter().map(|b| points[i].iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()).collect()
    };
    let mut g = c.benchmark_group("tsne_distances");
    g.bench_function("par", |b| b.iter(|| par::map_range(points.len(), row)));
    g.bench_function("seq", |b| b.iter(|| par::seq::map_range(points.len(), row)));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
