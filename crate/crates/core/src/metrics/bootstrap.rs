use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::auc::{auc, ScoredSet};
use crate::error::Result;
use crate::par;

/// Variance of AUC(a) − AUC(b) over paired bootstrap resamples of the cases.
/// Resamples that lose a class are redrawn.
pub fn paired_bootstrap_variance(
    a: &ScoredSet,
    b: &ScoredSet,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    auc(a)?;
    auc(b)?;
    let n = a.len();
    let diffs = par::map_range(reps, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        loop {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let pick = |s: &ScoredSet| {
                ScoredSet::new(
                    idx.iter().map(|&i| s.scores[i]).collect(),
                    idx.iter().map(|&i| s.labels[i]).collect(),
                )
                .expect("resample of valid set")
            };
            let (ra, rb) = (pick(a), pick(b));
            if let (Ok(x), Ok(y)) = (auc(&ra), auc(&rb)) {
                return x - y;
            }
        }
    });
    let m = diffs.iter().sum::<f64>() / reps as f64;
    Ok(diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (reps as f64 - 1.0))
}
