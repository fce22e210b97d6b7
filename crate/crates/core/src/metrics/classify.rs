use serde::{Deserialize, Serialize};

use super::threshold::Confusion;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub f1: Vec<f64>,
    /// Classes with no predicted and no actual positives.
    pub degenerate: Vec<bool>,
}

/// Per-class F1 of `scores >= threshold` against multi-hot `labels`, both N×L.
pub fn f1_per_class(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    thresholds: &[f64],
) -> Result<F1Result> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} score rows but {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let l = thresholds.len();
    if scores.iter().any(|r| r.len() != l) || labels.iter().any(|r| r.len() != l) {
        return Err(Error::Validation(format!(
            "every row must have {l} columns to match the thresholds"
        )));
    }
    let mut f1 = Vec::with_capacity(l);
    let mut degenerate = Vec::with_capacity(l);
    for c in 0..l {
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let lab: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        let conf = Confusion::at(&col, &lab, thresholds[c]);
        degenerate.push(conf.tp + conf.fp + conf.fn_ == 0);
        f1.push(conf.f1());
    }
    Ok(F1Result { f1, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_silent() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.1], vec![0.8, 0.2]];
        let labels = vec![vec![true, true], vec![false, false], vec![true, false]];
        let r = f1_per_class(&scores, &labels, &[0.5, 0.5]).unwrap();
        assert_eq!(r.f1, vec![1.0, 0.0]);
        assert_eq!(r.degenerate, vec![false, false]);
        let none = f1_per_class(&[vec![0.1]], &[vec![false]], &[0.5]).unwrap();
        assert_eq!(none.f1, vec![0.0]);
        assert_eq!(none.degenerate, vec![true]);
    }

    #[test]
    fn shape_checked() {
        assert!(f1_per_class(&[vec![0.1, 0.2]], &[vec![false]], &[0.5]).is_err());
    }
}
