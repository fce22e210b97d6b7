use serde::{Deserialize, Serialize};

use super::auc::ScoredSet;
use crate::error::{Error, Result};

/// Thresholds 0.01, 0.02, ..., 0.99.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Validation("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Validation(format!("threshold {t} outside (0, 1)")));
    }
    Ok(())
}

/// Counts of the binarized prediction `score >= t` against labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[bool], t: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= t, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// TP / (TP + FP + FN), 0 when the union is empty.
    pub fn jaccard(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }
}

fn argmax_smallest(grid: &[f64], mut score: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    for &t in grid {
        let j = score(t);
        if j > best.1 || (j == best.1 && t < best.0) {
            best = (t, j);
        }
    }
    best
}

/// Grid threshold maximizing the Jaccard index; ties go to the smallest threshold.
pub fn select_threshold_jaccard(scored: &ScoredSet, grid: &[f64]) -> Result<(f64, f64)> {
    check_grid(grid)?;
    if scored.n_pos() == 0 {
        return Err(Error::UndefinedMetric(
            "threshold selection needs at least one positive label".into(),
        ));
    }
    Ok(argmax_smallest(grid, |t| {
        Confusion::at(&scored.scores, &scored.labels, t).jaccard()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Shared,
    PerClass,
}

/// One threshold per class. In shared mode every entry is the same value, the
/// one maximizing the mean Jaccard over classes that have positives.
pub fn select_thresholds(
    columns: &[ScoredSet],
    grid: &[f64],
    mode: ThresholdMode,
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let with_pos: Vec<&ScoredSet> = columns.iter().filter(|c| c.n_pos() > 0).collect();
    if with_pos.is_empty() {
        return Err(Error::UndefinedMetric(
            "no class has a positive label".into(),
        ));
    }
    match mode {
        ThresholdMode::Shared => {
            let (t, _) = argmax_smallest(grid, |t| {
                with_pos
                    .iter()
                    .map(|c| Confusion::at(&c.scores, &c.labels, t).jaccard())
                    .sum::<f64>()
                    / with_pos.len() as f64
            });
            Ok(vec![t; columns.len()])
        }
        ThresholdMode::PerClass => columns
            .iter()
            .map(|c| {
                if c.n_pos() == 0 {
                    Ok(0.5)
                } else {
                    select_threshold_jaccard(c, grid).map(|(t, _)| t)
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let s = ScoredSet::new(vec![0.9, 0.7, 0.6, 0.2], vec![true, true, false, false]).unwrap();
        assert_eq!(select_threshold_jaccard(&s, &[0.5, 0.65, 0.8]).unwrap(), (0.65, 1.0));
    }

    #[test]
    fn separable_takes_smallest_in_gap() {
        let s = ScoredSet::new(vec![0.95, 0.72, 0.31, 0.05], vec![true, true, false, false]).unwrap();
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let (t, j) = select_threshold_jaccard(&s, &grid).unwrap();
        assert_eq!(j, 1.0);
        assert_eq!(t, 0.4);
    }

    #[test]
    fn grid_checked() {
        let s = ScoredSet::new(vec![0.9, 0.1], vec![true, false]).unwrap();
        assert!(select_threshold_jaccard(&s, &[]).is_err());
        assert!(select_threshold_jaccard(&s, &[0.0, 0.5]).is_err());
        let none = ScoredSet::new(vec![0.9, 0.1], vec![false, false]).unwrap();
        assert!(matches!(
            select_threshold_jaccard(&none, &[0.5]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn shared_mode_single_value() {
        let a = ScoredSet::new(vec![0.9, 0.2, 0.8], vec![true, false, true]).unwrap();
        let b = ScoredSet::new(vec![0.3, 0.6, 0.1], vec![false, true, false]).unwrap();
        let t = select_thresholds(&[a.clone(), b.clone()], &default_grid(), ThresholdMode::Shared).unwrap();
        assert_eq!(t[0], t[1]);
        let p = select_thresholds(&[a, b], &default_grid(), ThresholdMode::PerClass).unwrap();
        assert_eq!(p, vec![0.21, 0.31]);
    }
}
