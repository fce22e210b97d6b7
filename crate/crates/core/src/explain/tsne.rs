//! Exact t-SNE with early exaggeration, momentum and adaptive gains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProjection {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<String>,
    pub perplexity: f64,
    pub seed: u64,
    /// `(iteration, KL(P‖Q))` sampled during the second half of optimization.
    pub kl_history: Vec<(usize, f64)>,
}

fn sq_dists(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    par::map_slice(x, |a| {
        x.iter()
            .map(|b| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
            .collect()
    })
}

/// Row-stochastic conditional affinities `p(j|i)` whose entropy matches
/// `ln(perplexity)`, found by bisection on the Gaussian precision.
pub fn conditional_affinities(embeddings: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let d = sq_dists(embeddings);
    let target = perplexity.ln();
    par::map_range(d.len(), |i| {
        let row = &d[i];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let mut p = vec![0.0; row.len()];
        for _ in 0..100 {
            let min = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for (j, v) in row.iter().enumerate() {
                p[j] = if j == i { 0.0 } else { (-(v - min) * beta).exp() };
                sum += p[j];
            }
            let mut h = 0.0;
            for (j, v) in row.iter().enumerate() {
                if j != i {
                    p[j] /= sum;
                    if p[j] > 0.0 {
                        h += beta * (v - min) * p[j];
                    }
                }
            }
            h += sum.ln();
            if (h - target).abs() < 1e-10 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p
    })
}

fn joint(pc: &[Vec<f64>]) -> Vec<f64> {
    let n = pc.len();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((pc[i][j] + pc[j][i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    p
}

/// Gradient of KL(P‖Q) at `y` (n×2, flat) with P scaled by `exag`, and the
/// KL value for the unscaled P.
fn gradient(p: &[f64], y: &[f64], n: usize, exag: f64) -> (Vec<f64>, f64) {
    let num: Vec<Vec<f64>> = par::map_range(n, |i| {
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[2 * i] - y[2 * j];
                    let dy = y[2 * i + 1] - y[2 * j + 1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
            .collect()
    });
    let z: f64 = num.iter().map(|r| r.iter().sum::<f64>()).sum();
    let rows: Vec<([f64; 2], f64)> = par::map_range(n, |i| {
        let mut g = [0.0; 2];
        let mut kl = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let q = (num[i][j] / z).max(1e-12);
            let pij = p[i * n + j];
            kl += pij * (pij / q).ln();
            let m = (exag * pij - q) * num[i][j];
            g[0] += 4.0 * m * (y[2 * i] - y[2 * j]);
            g[1] += 4.0 * m * (y[2 * i + 1] - y[2 * j + 1]);
        }
        (g, kl)
    });
    let kl = rows.iter().map(|r| r.1).sum();
    (rows.iter().flat_map(|r| r.0).collect(), kl)
}

/// Project `embeddings` (N×D) to two dimensions.
pub fn tsne_project(
    embeddings: &[Vec<f64>],
    labels: &[String],
    config: &TsneConfig,
    seed: u64,
) -> Result<EmbeddingProjection> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(Error::Validation(format!("{n} embeddings but {} labels", labels.len())));
    }
    if !(config.perplexity > 0.0) || (n as f64) <= 3.0 * config.perplexity {
        return Err(Error::Config(format!(
            "t-SNE needs more than 3 × perplexity points ({} for perplexity {}), got {n}",
            (3.0 * config.perplexity).floor() as usize + 1,
            config.perplexity
        )));
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("embeddings contain non-finite values".into()));
    }
    let p = joint(&conditional_affinities(embeddings, config.perplexity));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut vel = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let half = config.iterations / 2;
    let mut kl_history = Vec::new();
    let mut last_kl = f64::INFINITY;
    let mut step_scale = 1.0;
    for it in 0..config.iterations {
        let exag = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < config.exaggeration_iters { 0.5 } else { 0.8 };
        let (g, _) = gradient(&p, &y, n, exag);
        let prev = (y.clone(), vel.clone(), gains.clone());
        for k in 0..2 * n {
            gains[k] = if (g[k] > 0.0) != (vel[k] > 0.0) { gains[k] + 0.2 } else { (gains[k] * 0.8).max(0.01) };
            vel[k] = momentum * vel[k] - step_scale * config.learning_rate * gains[k] * g[k];
            y[k] += vel[k];
        }
        center(&mut y, n);
        if it >= half {
            // in the second half an update that raises the objective is undone
            // and retried with a smaller step
            let (_, kl) = gradient(&p, &y, n, 1.0);
            if kl > last_kl {
                (y, vel, gains) = prev;
                vel.iter_mut().for_each(|v| *v = 0.0);
                step_scale *= 0.5;
                kl_history.push((it, last_kl));
                continue;
            }
            last_kl = kl;
            kl_history.push((it, kl));
        }
    }
    let coords: Vec<[f64; 2]> = (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect();
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training("t-SNE produced non-finite coordinates".into()));
    }
    Ok(EmbeddingProjection {
        coords,
        labels: labels.to_vec(),
        perplexity: config.perplexity,
        seed,
        kl_history,
    })
}

fn center(y: &mut [f64], n: usize) {
    for d in 0..2 {
        let m = (0..n).map(|i| y[2 * i + d]).sum::<f64>() / n as f64;
        (0..n).for_each(|i| y[2 * i + d] -= m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect();
        for row in conditional_affinities(&x, 10.0) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let x = vec![vec![0.0]; 90];
        let l = vec![String::new(); 90];
        assert!(matches!(tsne_project(&x, &l, &TsneConfig::default(), 0), Err(Error::Config(_))));
    }
}
