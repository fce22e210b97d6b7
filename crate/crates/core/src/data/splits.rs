use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    Patient,
    Image,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::Patient => f.write_str("patient"),
            Grouping::Image => f.write_str("image"),
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patient" => Ok(Grouping::Patient),
            "image" => Ok(Grouping::Image),
            other => Err(Error::Config(format!("unknown grouping `{other}`"))),
        }
    }
}

/// Fold assignment of every usable record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_folds: usize,
    pub grouping: Grouping,
    /// record index → fold index
    pub assignments: BTreeMap<usize, usize>,
}

impl SplitPlan {
    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(&i, _)| i)
            .collect()
    }

    /// Cross-validation roles for `fold`: (train, validation, test).
    ///
    /// The test set is `fold` itself, the validation set (used for early
    /// stopping and threshold selection) is the next fold, and the remaining
    /// folds train. Requires at least three folds.
    pub fn cv_roles(&self, fold: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        if self.n_folds < 3 {
            return Err(Error::Config(
                "cross-validation with a validation fold needs n_folds >= 3".into(),
            ));
        }
        let val_fold = (fold + 1) % self.n_folds;
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for (&i, &f) in &self.assignments {
            if f == fold {
                test.push(i);
            } else if f == val_fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, val, test))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

struct Group {
    key: String,
    members: Vec<usize>,
    positive: bool,
}

/// Assign usable records to `n_folds` folds, stratified on the binary
/// abnormality key at group level.
///
/// Groups are ordered by key before the seeded shuffle, so the plan does not
/// depend on record order. Positive groups are dealt round-robin, then the
/// negative groups continue the deal from where the positives stopped, which
/// keeps both the per-fold positive count and the per-fold group count within
/// one of the ideal.
pub fn make_splits(
    manifest: &DatasetManifest,
    n_folds: usize,
    seed: u64,
    grouping: Grouping,
) -> Result<SplitPlan> {
    if n_folds < 2 {
        return Err(Error::Config(format!("n_folds must be >= 2, got {n_folds}")));
    }
    let mut by_key: BTreeMap<String, Group> = BTreeMap::new();
    for i in manifest.usable_indices() {
        let r = &manifest.records[i];
        let key = match grouping {
            Grouping::Patient => r.patient_id.clone(),
            // patient id first so that ordering is stable under row permutation
            Grouping::Image => format!("{}\u{0}{}", r.patient_id, r.image_path.display()),
        };
        let g = by_key.entry(key.clone()).or_insert_with(|| Group {
            key,
            members: Vec::new(),
            positive: false,
        });
        g.members.push(i);
        g.positive |= manifest.binary_target(i).unwrap_or(false);
    }
    if by_key.len() < n_folds {
        return Err(Error::Config(format!(
            "{} {} groups cannot fill {} folds",
            by_key.len(),
            grouping,
            n_folds
        )));
    }

    let (mut pos, mut neg): (Vec<Group>, Vec<Group>) =
        by_key.into_values().partition(|g| g.positive);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut assignments = BTreeMap::new();
    for (slot, g) in pos.iter().chain(neg.iter()).enumerate() {
        let fold = slot % n_folds;
        debug_assert!(!g.key.is_empty());
        for &m in &g.members {
            assignments.insert(m, fold);
        }
    }
    Ok(SplitPlan {
        seed,
        n_folds,
        grouping,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BinaryLabel, FundusRecord, TaskKind};
    use std::collections::{BTreeSet, HashMap};

    fn manifest(rows: &[(&str, bool)]) -> DatasetManifest {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (p, ab))| {
                FundusRecord::new(format!("img{i}.png"), *p).with_binary(BinaryLabel::from_bit(*ab))
            })
            .collect();
        DatasetManifest::new("t", TaskKind::Abnormality, records).unwrap()
    }

    #[test]
    fn ten_patients_five_folds_exact() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let rows: Vec<(&str, bool)> = ids.iter().enumerate().map(|(i, p)| (p.as_str(), i < 5)).collect();
        let m = manifest(&rows);
        let plan = make_splits(&m, 5, 7, Grouping::Patient).unwrap();
        for f in 0..5 {
            let members = plan.fold_members(f);
            let pos = members.iter().filter(|&&i| m.records[i].stratum()).count();
            assert_eq!(members.len(), 2);
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn multi_image_patient_stays_together() {
        let mut rows: Vec<(String, bool)> = (0..6).map(|_| ("big".to_string(), true)).collect();
        rows.extend((0..9).map(|i| (format!("q{i}"), i % 2 == 0)));
        let rows_ref: Vec<(&str, bool)> = rows.iter().map(|(p, b)| (p.as_str(), *b)).collect();
        let m = manifest(&rows_ref);
        let plan = make_splits(&m, 5, 3, Grouping::Patient).unwrap();
        let folds: BTreeSet<usize> = (0..6).map(|i| plan.assignments[&i]).collect();
        assert_eq!(folds.len(), 1);
        // enumerate: every patient maps to exactly one fold
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (&i, &f) in &plan.assignments {
            let p = m.records[i].patient_id.as_str();
            assert_eq!(*seen.entry(p).or_insert(f), f);
        }
    }

    #[test]
    fn too_few_groups() {
        let m = manifest(&[("a", true), ("a", false), ("b", true)]);
        assert!(matches!(make_splits(&m, 5, 0, Grouping::Patient), Err(Error::Config(_))));
        assert!(matches!(make_splits(&m, 1, 0, Grouping::Image), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let ids: Vec<String> = (0..40).map(|i| format!("p{}", i / 2)).collect();
        let rows: Vec<(&str, bool)> = ids.iter().enumerate().map(|(i, p)| (p.as_str(), i % 3 == 0)).collect();
        let m = manifest(&rows);
        let a = make_splits(&m, 5, 11, Grouping::Patient).unwrap();
        let b = make_splits(&m, 5, 11, Grouping::Patient).unwrap();
        assert_eq!(a, b);

        let mut reversed = m.clone();
        reversed.records.reverse();
        let c = make_splits(&reversed, 5, 11, Grouping::Patient).unwrap();
        let n = m.records.len();
        for (&i, &f) in &a.assignments {
            assert_eq!(c.assignments[&(n - 1 - i)], f);
        }
    }

    #[test]
    fn excluded_never_assigned() {
        let mut m = manifest(&[("a", true), ("b", false), ("c", true), ("d", false)]);
        m.records[1] = m.records[1].clone().excluded();
        m.recount();
        let plan = make_splits(&m, 3, 0, Grouping::Patient).unwrap();
        assert!(!plan.assignments.contains_key(&1));
        assert_eq!(plan.assignments.len(), 3);
    }

    #[test]
    fn json_shape() {
        let m = manifest(&[("a", true), ("b", false)]);
        let plan = make_splits(&m, 2, 5, Grouping::Image).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        for key in ["seed", "n_folds", "grouping", "assignments"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(SplitPlan::from_json(&plan.to_json().unwrap()).unwrap(), plan);
    }
}
