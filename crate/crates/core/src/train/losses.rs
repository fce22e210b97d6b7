//! Losses evaluated in double precision. Each returns the scalar loss and its
//! gradient with respect to the logits, laid out like the logits.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Class-weighted softmax cross-entropy over `b` rows of `c` logits,
/// normalized by the total applied weight.
pub fn weighted_cross_entropy(
    logits: &[f64],
    c: usize,
    targets: &[usize],
    weights: &[f64],
) -> Result<LossOutput> {
    if c < 2 {
        return Err(Error::Validation(format!("need at least 2 classes, got {c}")));
    }
    if weights.len() != c {
        return Err(Error::Validation(format!(
            "{} class weights for {c} classes",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!("class weight {w} is not positive")));
    }
    let b = targets.len();
    if logits.len() != b * c {
        return Err(Error::Validation(format!(
            "{} logits for {b}x{c}",
            logits.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| **t >= c) {
        return Err(Error::Domain(format!("target class {t} out of range")));
    }
    let total_w: f64 = targets.iter().map(|&t| weights[t]).sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        let w = weights[t] / total_w;
        loss += w * (lse - row[t]);
        for k in 0..c {
            let p = (row[k] - lse).exp();
            grad[i * c + k] = w * (p - if k == t { 1.0 } else { 0.0 });
        }
    }
    Ok(LossOutput { loss, grad })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of sigmoid(logit) against 0/1 targets.
pub fn per_label_cross_entropy(logits: &[f64], targets: &[f64]) -> Result<LossOutput> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Validation(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| **t != 0.0 && **t != 1.0) {
        return Err(Error::Domain(format!("target {t} is not 0 or 1")));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&x, &y)| {
            loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            (sigmoid(x) - y) / n
        })
        .collect();
    Ok(LossOutput { loss: loss / n, grad })
}

pub const DICE_EPS: f64 = 1e-6;

/// Soft Dice loss on sigmoid probabilities, `b` maps of `hw` pixels each,
/// averaged over the batch.
pub fn dice_loss(logits: &[f64], masks: &[f64], b: usize) -> Result<LossOutput> {
    if logits.len() != masks.len() || b == 0 || logits.len() % b != 0 {
        return Err(Error::Validation(format!(
            "logit map of {} values does not match {} mask values in {b} maps",
            logits.len(),
            masks.len()
        )));
    }
    if masks.iter().any(|m| *m != 0.0 && *m != 1.0) {
        return Err(Error::Validation("masks must be binary".into()));
    }
    let hw = logits.len() / b;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..b {
        let x = &logits[i * hw..(i + 1) * hw];
        let m = &masks[i * hw..(i + 1) * hw];
        let p: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
        let inter: f64 = p.iter().zip(m).map(|(a, b)| a * b).sum();
        let s: f64 = p.iter().sum::<f64>() + m.iter().sum::<f64>() + DICE_EPS;
        let num = 2.0 * inter + DICE_EPS;
        loss += 1.0 - num / s;
        for j in 0..hw {
            let dp = -(2.0 * m[j] * s - num) / (s * s);
            grad[i * hw + j] = dp * p[j] * (1.0 - p[j]) / b as f64;
        }
    }
    Ok(LossOutput { loss: loss / b as f64, grad })
}

/// Inverse-prevalence class weights scaled so that the prevalence-weighted
/// mean weight is 1. Classes absent from `counts` get weight 1.
pub fn inverse_prevalence_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::Validation("no labelled samples".into()));
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    if counts.contains(&0) {
        log::warn!("class counts {counts:?} include an empty class; weights recomputed over present classes");
    }
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                n as f64 / (present * c as f64)
            }
        })
        .collect())
}
