use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub value: f64,
    /// Both masks empty; value set to 1 by convention.
    pub both_empty: bool,
}

fn counts(pred: &[bool], truth: &[bool]) -> Result<(usize, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut inter = 0;
    let (mut p, mut t) = (0, 0);
    for (&a, &b) in pred.iter().zip(truth) {
        p += a as usize;
        t += b as usize;
        inter += (a && b) as usize;
    }
    Ok((inter, p, t))
}

/// 2|P∩T| / (|P| + |T|) over flattened binary masks of equal shape.
pub fn dice_coefficient(pred: &[bool], truth: &[bool]) -> Result<Overlap> {
    let (i, p, t) = counts(pred, truth)?;
    Ok(if p + t == 0 {
        Overlap { value: 1.0, both_empty: true }
    } else {
        Overlap { value: 2.0 * i as f64 / (p + t) as f64, both_empty: false }
    })
}

/// |P∩T| / |P∪T|.
pub fn jaccard_index(pred: &[bool], truth: &[bool]) -> Result<Overlap> {
    let (i, p, t) = counts(pred, truth)?;
    Ok(if p + t == 0 {
        Overlap { value: 1.0, both_empty: true }
    } else {
        Overlap { value: i as f64 / (p + t - i) as f64, both_empty: false }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        let a = [true, true, false, false];
        let b = [false, false, true, true];
        assert_eq!(dice_coefficient(&a, &a).unwrap().value, 1.0);
        assert_eq!(dice_coefficient(&a, &b).unwrap().value, 0.0);
        let e = dice_coefficient(&[false; 4], &[false; 4]).unwrap();
        assert!(e.both_empty && e.value == 1.0);
        assert!(dice_coefficient(&a, &[true]).is_err());
        let c = [true, false, true, false];
        assert_eq!(dice_coefficient(&a, &c).unwrap().value, 0.5);
        assert_eq!(jaccard_index(&a, &c).unwrap().value, 1.0 / 3.0);
    }
}
