use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores with binary labels for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::Validation("scored set is empty".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Validation("scores contain NaN".into()));
        }
        Ok(Self {
            scores,
            labels,
            group_key: None,
        })
    }

    pub fn with_group(mut self, key: impl Into<String>) -> Self {
        self.group_key = Some(key.into());
        self
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    pub fn positives(&self) -> Vec<f64> {
        self.iter_class(true)
    }

    pub fn negatives(&self) -> Vec<f64> {
        self.iter_class(false)
    }

    fn iter_class(&self, class: bool) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == class)
            .map(|(&s, _)| s)
            .collect()
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        if self.n_pos() == 0 || self.n_neg() == 0 {
            return Err(Error::UndefinedMetric(
                "AUC needs at least one positive and one negative".into(),
            ));
        }
        Ok(())
    }
}

/// 1-based midranks (average rank for ties) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the rank-sum (Mann–Whitney) identity; ties
/// count one half.
pub fn auc(scored: &ScoredSet) -> Result<f64> {
    scored.require_both_classes()?;
    let ranks = midranks(&scored.scores);
    let n_pos = scored.n_pos() as f64;
    let n_neg = scored.n_neg() as f64;
    let rank_sum: f64 = ranks
        .iter()
        .zip(&scored.labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_tied() {
        let s = ScoredSet::new(vec![0.9, 0.8, 0.2, 0.1], vec![true, true, false, false]).unwrap();
        assert_eq!(auc(&s).unwrap(), 1.0);
        let t = ScoredSet::new(vec![0.3; 6], vec![true, false, true, false, false, true]).unwrap();
        assert_eq!(auc(&t).unwrap(), 0.5);
    }

    #[test]
    fn single_class_undefined() {
        let s = ScoredSet::new(vec![0.1, 0.2], vec![true, true]).unwrap();
        assert!(matches!(auc(&s), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
