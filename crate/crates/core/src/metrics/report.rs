use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auc::ScoredSet;
use super::delong::{delong_test, DeLongResult};
use crate::error::{Error, Result};

pub type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub result: DeLongResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub per_fold: Vec<MetricMap>,
    pub mean: MetricMap,
    pub std: MetricMap,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub tests: Vec<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

/// Mean and population standard deviation of each metric across folds.
pub fn aggregate_cv(per_fold: Vec<MetricMap>) -> Result<MetricReport> {
    if per_fold.len() < 2 {
        return Err(Error::Aggregation(format!(
            "need at least 2 folds, got {}",
            per_fold.len()
        )));
    }
    let keys: Vec<&String> = per_fold.iter().flat_map(|m| m.keys()).collect();
    let mut mean = MetricMap::new();
    let mut std = MetricMap::new();
    for key in keys {
        if mean.contains_key(key) {
            continue;
        }
        let mut vals = Vec::with_capacity(per_fold.len());
        for (i, m) in per_fold.iter().enumerate() {
            match m.get(key) {
                Some(v) => vals.push(*v),
                None => {
                    return Err(Error::Aggregation(format!(
                        "metric '{key}' missing from fold {i}"
                    )))
                }
            }
        }
        let (m, s) = mean_std(&vals);
        mean.insert(key.clone(), m);
        std.insert(key.clone(), s);
    }
    Ok(MetricReport {
        per_fold,
        mean,
        std,
        ..Default::default()
    })
}

pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Concatenate out-of-fold predictions into one set.
pub fn pool(sets: &[ScoredSet]) -> Result<ScoredSet> {
    let scores = sets.iter().flat_map(|s| s.scores.iter().copied()).collect();
    let labels = sets.iter().flat_map(|s| s.labels.iter().copied()).collect();
    ScoredSet::new(scores, labels)
}

impl MetricReport {
    pub fn compare(
        &mut self,
        label_a: &str,
        a: &ScoredSet,
        label_b: &str,
        b: &ScoredSet,
    ) -> Result<&Comparison> {
        let result = delong_test(a, b)?;
        self.tests.push(Comparison {
            label_a: label_a.to_string(),
            label_b: label_b.to_string(),
            result,
        });
        Ok(self.tests.last().unwrap())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn cell(&self, key: &str) -> Option<String> {
        Some(format_mean_std(*self.mean.get(key)?, *self.std.get(key)?))
    }
}

/// "0.945 ± 0.002"
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

pub fn format_p_value(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out += &line(&self.header);
        out += &line(&vec!["---".to_string(); self.header.len()]);
        for r in &self.rows {
            out += &line(r);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 cells")
    }
}

/// Per-class F1 table with one threshold column per model, plus a leading row
/// of positive counts per class.
pub fn f1_table(classes: &[&str], counts: &[usize], rows: &[(String, f64, Vec<f64>)]) -> Table {
    let mut t = Table::new(
        ["F1 score", "Threshold"]
            .into_iter()
            .map(String::from)
            .chain(classes.iter().map(|c| c.to_string())),
    );
    t.push(
        ["Number of Disease".to_string(), String::new()]
            .into_iter()
            .chain(counts.iter().map(|c| c.to_string())),
    );
    for (name, thr, f1) in rows {
        t.push(
            [name.clone(), format!("{thr:.2}")]
                .into_iter()
                .chain(f1.iter().map(|v| format!("{v:.4}"))),
        );
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(auc: f64) -> MetricMap {
        MetricMap::from([("auc".to_string(), auc)])
    }

    #[test]
    fn constant_folds() {
        let r = aggregate_cv(vec![fold(0.9); 5]).unwrap();
        assert!((r.mean["auc"] - 0.9).abs() < 1e-15);
        assert!(r.std["auc"].abs() < 1e-15);
    }

    #[test]
    fn missing_metric() {
        let mut b = fold(0.8);
        b.insert("dice".into(), 0.5);
        assert!(matches!(aggregate_cv(vec![fold(0.9), b]), Err(Error::Aggregation(_))));
        assert!(matches!(aggregate_cv(vec![fold(0.9)]), Err(Error::Aggregation(_))));
    }

    #[test]
    fn cell_format() {
        assert_eq!(format_mean_std(0.9451, 0.0021), "0.945 ± 0.002");
        assert_eq!(format_p_value(0.0004), "< 0.001");
        assert_eq!(format_p_value(0.25), "0.250");
    }

    #[test]
    fn f1_table_shape() {
        let t = f1_table(
            &["AMD", "RVO"],
            &[211, 5],
            &[("Scratch".into(), 0.85, vec![0.46291, 0.0])],
        );
        let csv = t.to_csv();
        assert_eq!(
            csv,
            "F1 score,Threshold,AMD,RVO\nNumber of Disease,,211,5\nScratch,0.85,0.4629,0.0000\n"
        );
        assert!(t.to_markdown().starts_with("| F1 score | Threshold |"));
    }
}
