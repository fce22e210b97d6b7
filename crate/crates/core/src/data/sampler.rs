use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

/// Per-class sample counts for a fraction of a pool.
///
/// Quotas start from the floor of `fraction * count`, the remaining slots up
/// to `ceil(fraction * total)` go to the largest remainders (ties to the lower
/// class index). A class present in the pool never drops to zero: it borrows
/// one slot from the largest quota that can spare it, or the total grows.
pub fn class_quotas(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = ((fraction * total as f64) - 1e-9).ceil().max(0.0) as usize;
    let target = target.min(total);
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(counts)
        .map(|(&e, &c)| (e.floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    for &c in order.iter().cycle().take(order.len() * 2) {
        if assigned >= target {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            assigned += 1;
        }
    }
    for c in 0..counts.len() {
        if counts[c] > 0 && quota[c] == 0 {
            log::warn!(
                "fraction {fraction} rounds class {c} to zero samples; keeping one to stay trainable"
            );
            quota[c] = 1;
            let donor = (0..counts.len())
                .filter(|&d| d != c && quota[d] > 1)
                .max_by_key(|&d| (quota[d], std::cmp::Reverse(d)));
            if let Some(d) = donor {
                quota[d] -= 1;
            }
        }
    }
    quota
}

/// Draw `ceil(fraction * |pool|)` records from `pool`, stratified by the
/// binary abnormality key. Returned indices keep the pool's order.
pub fn sample_fraction(
    manifest: &DatasetManifest,
    pool: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let pool: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| manifest.records[i].is_usable())
        .collect();
    if pool.is_empty() {
        return Err(Error::Config("fraction sampler needs a non-empty pool".into()));
    }
    if fraction == 1.0 {
        return Ok(pool);
    }
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in &pool {
        let c = manifest.binary_target(i).unwrap_or(false) as usize;
        classes[c].push(i);
    }
    let quotas = class_quotas(&[classes[0].len(), classes[1].len()], fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for (members, &q) in classes.iter_mut().zip(&quotas) {
        members.sort_by(|&a, &b| {
            let ra = &manifest.records[a];
            let rb = &manifest.records[b];
            (&ra.patient_id, &ra.image_path, a).cmp(&(&rb.patient_id, &rb.image_path, b))
        });
        members.shuffle(&mut rng);
        chosen.extend(members.iter().take(q).copied());
    }
    Ok(pool.into_iter().filter(|i| chosen.contains(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BinaryLabel, FundusRecord, TaskKind};

    fn pool_manifest(neg: usize, pos: usize) -> DatasetManifest {
        let records = (0..neg + pos)
            .map(|i| {
                FundusRecord::new(format!("{i}.png"), format!("p{i}"))
                    .with_binary(BinaryLabel::from_bit(i >= neg))
            })
            .collect();
        DatasetManifest::new("pool", TaskKind::Abnormality, records).unwrap()
    }

    #[test]
    fn one_percent_of_thousand() {
        let m = pool_manifest(800, 200);
        let pool: Vec<usize> = (0..1000).collect();
        let s = sample_fraction(&m, &pool, 0.01, 1).unwrap();
        assert_eq!(s.len(), 10);
        let pos = s.iter().filter(|&&i| m.records[i].stratum()).count();
        assert_eq!((s.len() - pos, pos), (8, 2));
    }

    #[test]
    fn full_fraction_is_identity() {
        let m = pool_manifest(7, 3);
        let pool: Vec<usize> = vec![9, 0, 4, 2];
        assert_eq!(sample_fraction(&m, &pool, 1.0, 5).unwrap(), pool);
    }

    #[test]
    fn deterministic_under_seed() {
        let m = pool_manifest(60, 40);
        let pool: Vec<usize> = (0..100).collect();
        assert_eq!(
            sample_fraction(&m, &pool, 0.5, 9).unwrap(),
            sample_fraction(&m, &pool, 0.5, 9).unwrap()
        );
    }

    #[test]
    fn floor_keeps_each_present_class() {
        let m = pool_manifest(99, 1);
        let pool: Vec<usize> = (0..100).collect();
        let s = sample_fraction(&m, &pool, 0.01, 0).unwrap();
        assert!(s.iter().any(|&i| m.records[i].stratum()));
        assert!(s.iter().any(|&i| !m.records[i].stratum()));
    }

    #[test]
    fn rejects_bad_fraction() {
        let m = pool_manifest(2, 2);
        assert!(sample_fraction(&m, &[0, 1], 0.0, 0).is_err());
        assert!(sample_fraction(&m, &[0, 1], 1.5, 0).is_err());
        assert!(sample_fraction(&m, &[], 0.5, 0).is_err());
    }
}
