use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{pair_oof, primary_metric, read_oof, write_json, Outcome, RunOptions, DOWNSTREAM};
use crate::data::{TaskKind, DISEASE_NAMES, REPORTED_DISEASES};
use crate::error::{Error, Result};
use crate::metrics::{f1_table, format_p_value, MetricReport, Table};
use crate::model::Regime;
use crate::plot::{line_chart, Series};
use crate::train::Protocol;
use crate::util::write_atomic;

/// Which completed downstream runs a report covers.
#[derive(Debug, Clone, Default)]
pub struct ReportFilter {
    pub hashes: Option<BTreeSet<String>>,
    pub task: Option<TaskKind>,
    pub regime: Option<Regime>,
}

impl ReportFilter {
    pub fn from_configs(cfgs: &[ExperimentConfig]) -> Self {
        Self {
            hashes: Some(cfgs.iter().map(|c| c.config_hash()).collect()),
            ..Default::default()
        }
    }

    fn accepts(&self, hash: &str, cfg: &ExperimentConfig) -> bool {
        self.hashes.as_ref().is_none_or(|h| h.contains(hash))
            && self.task.is_none_or(|t| t == cfg.task)
            && self.regime.is_none_or(|r| r == cfg.regime)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub sources: Vec<String>,
    pub files: Vec<String>,
    /// Series names of each plot file.
    #[serde(default)]
    pub plots: BTreeMap<String, Vec<String>>,
}

struct Cell {
    hash: String,
    cfg: ExperimentConfig,
    report: MetricReport,
}

fn protocol_tag(p: Protocol) -> &'static str {
    match p {
        Protocol::LinearProbe => "LP",
        Protocol::FineTune => "FT",
        Protocol::FullTrain => "Full",
    }
}

fn regime_rank(r: Regime) -> usize {
    Regime::ALL.iter().position(|&x| x == r).unwrap_or(0)
}

fn load_cells(opts: &RunOptions, filter: &ReportFilter) -> Result<Vec<Cell>> {
    let layout = opts.layout();
    let mut cells = Vec::new();
    for e in layout.ledger().completed_runs(DOWNSTREAM)? {
        let dir = layout.run_dir(DOWNSTREAM, &e.config_hash);
        let cfg_path = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|err| Error::io(&cfg_path, err))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if !filter.accepts(&e.config_hash, &cfg) {
            continue;
        }
        let report = MetricReport::load(&dir.join("report.json"))?;
        cells.push(Cell { hash: e.config_hash, cfg, report });
    }
    cells.sort_by(|a, b| {
        (a.cfg.task.as_str(), protocol_tag(a.cfg.protocol), regime_rank(a.cfg.regime), a.cfg.resolution)
            .cmp(&(b.cfg.task.as_str(), protocol_tag(b.cfg.protocol), regime_rank(b.cfg.regime), b.cfg.resolution))
            .then(a.cfg.fraction.total_cmp(&b.cfg.fraction))
            .then(a.hash.cmp(&b.hash))
    });
    Ok(cells)
}

/// Fill in DeLong comparisons that were skipped at run time because the
/// reference cell had not finished yet.
fn complete_comparisons(opts: &RunOptions, cells: &mut [Cell]) -> Result<()> {
    let layout = opts.layout();
    let done: BTreeSet<String> = cells.iter().map(|c| c.hash.clone()).collect();
    for c in cells.iter_mut() {
        if !c.report.tests.is_empty() || c.cfg.task != TaskKind::Abnormality {
            continue;
        }
        let Some(rc) = c.cfg.reference_config()? else { continue };
        let rh = rc.config_hash();
        if rh == c.hash || (!done.contains(&rh) && layout.ledger().completed(&rh, DOWNSTREAM)?.is_none()) {
            continue;
        }
        let ours = read_oof(&layout.run_dir(DOWNSTREAM, &c.hash).join("oof.csv"))?;
        let theirs = read_oof(&layout.run_dir(DOWNSTREAM, &rh).join("oof.csv"))?;
        let (a, b) = pair_oof(&ours, &theirs)?;
        c.report.compare(&c.cfg.label(), &a, &rc.label(), &b)?;
    }
    Ok(())
}

fn summary_table(cells: &[Cell]) -> Table {
    let referenced: BTreeSet<String> = cells
        .iter()
        .filter_map(|c| c.cfg.reference_config().ok().flatten())
        .map(|r| r.config_hash())
        .collect();
    let mut t = Table::new(["Task", "Regime", "Protocol", "Resolution", "Fraction", "Metric", "Mean ± SD", "p-value"]);
    for c in cells {
        let key = primary_metric(c.cfg.task);
        let p = match c.report.tests.first() {
            Some(test) => format_p_value(test.result.p_value),
            None if referenced.contains(&c.hash) => "Ref.".to_string(),
            None => String::new(),
        };
        t.push([
            c.cfg.task.as_str().to_string(),
            c.cfg.regime.label().to_string(),
            protocol_tag(c.cfg.protocol).to_string(),
            c.cfg.resolution.to_string(),
            format!("{}%", c.cfg.fraction * 100.0),
            key.to_string(),
            c.report.cell(key).unwrap_or_else(|| "n/a".into()),
            p,
        ]);
    }
    t
}

/// Mean metric per (series, x) over `cells`, one series per regime (and
/// protocol when both appear).
fn series_by<F: Fn(&ExperimentConfig) -> f64>(cells: &[&Cell], x: F) -> Vec<Series> {
    let protocols: BTreeSet<&str> = cells.iter().map(|c| protocol_tag(c.cfg.protocol)).collect();
    let mut groups: BTreeMap<(usize, &str), (String, Vec<(f64, f64)>)> = BTreeMap::new();
    for c in cells {
        let Some(&y) = c.report.mean.get(primary_metric(c.cfg.task)) else { continue };
        let tag = protocol_tag(c.cfg.protocol);
        let name = if protocols.len() > 1 {
            format!("{} ({tag})", c.cfg.regime.label())
        } else {
            c.cfg.regime.label().to_string()
        };
        groups
            .entry((regime_rank(c.cfg.regime), tag))
            .or_insert_with(|| (name, Vec::new()))
            .1
            .push((x(&c.cfg), y));
    }
    groups
        .into_values()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect()
}

/// Tables and plots over completed downstream runs; output goes to
/// `reports/<name>/`. Rendering depends only on the ledger contents.
pub fn cmd_report(filter: &ReportFilter, name: &str, opts: &RunOptions) -> Result<Outcome> {
    let mut cells = load_cells(opts, filter)?;
    if cells.is_empty() {
        return Err(Error::Validation("no completed downstream runs match the report filter".into()));
    }
    complete_comparisons(opts, &mut cells)?;
    let dir = opts.layout().reports().join(name);
    let mut files = Vec::new();
    let mut emit = |file: String, bytes: &[u8]| -> Result<()> {
        write_atomic(&dir.join(&file), bytes)?;
        files.push(file);
        Ok(())
    };
    let table = summary_table(&cells);
    emit("table.md".into(), table.to_markdown().as_bytes())?;
    emit("table.csv".into(), table.to_csv().as_bytes())?;

    let mut plots = BTreeMap::new();
    let tasks: BTreeSet<&str> = cells.iter().map(|c| c.cfg.task.as_str()).collect();
    for task in tasks {
        let of_task: Vec<&Cell> = cells.iter().filter(|c| c.cfg.task.as_str() == task).collect();
        let metric = primary_metric(of_task[0].cfg.task).to_uppercase();
        let max_fraction = of_task.iter().map(|c| c.cfg.fraction).fold(0.0, f64::max);
        let max_res = of_task.iter().map(|c| c.cfg.resolution).max().unwrap_or(0);

        let at_fraction: Vec<&Cell> = of_task.iter().copied().filter(|c| c.cfg.fraction == max_fraction).collect();
        let series = series_by(&at_fraction, |c| c.resolution as f64);
        let img = line_chart(
            &series,
            &format!("{metric} VS RESOLUTION"),
            "RESOLUTION",
            &metric,
            false,
        );
        let file = format!("resolution_{task}.png");
        img.save_png(&dir.join(&file))?;
        plots.insert(file.clone(), series.into_iter().map(|s| s.name).collect());
        files.push(file);

        let at_res: Vec<&Cell> = of_task.iter().copied().filter(|c| c.cfg.resolution == max_res).collect();
        let series = series_by(&at_res, |c| c.fraction * 100.0);
        let img = line_chart(
            &series,
            &format!("{metric} VS DATA FRACTION"),
            "FRACTION (%)",
            &metric,
            true,
        );
        let file = format!("fraction_{task}.png");
        img.save_png(&dir.join(&file))?;
        plots.insert(file.clone(), series.into_iter().map(|s| s.name).collect());
        files.push(file);

        if task == TaskKind::MultiDisease.as_str() {
            let rows: Vec<(String, f64, Vec<f64>)> = of_task
                .iter()
                .map(|c| {
                    let thr = if c.report.thresholds.is_empty() {
                        0.5
                    } else {
                        c.report.thresholds.iter().sum::<f64>() / c.report.thresholds.len() as f64
                    };
                    let f1 = DISEASE_NAMES[..REPORTED_DISEASES]
                        .iter()
                        .map(|d| c.report.mean.get(&format!("f1_{d}")).copied().unwrap_or(f64::NAN))
                        .collect();
                    (format!("{} ({})", c.cfg.regime.label(), protocol_tag(c.cfg.protocol)), thr, f1)
                })
                .collect();
            let counts = counts_from_runs(opts, &of_task);
            let t = f1_table(&DISEASE_NAMES[..REPORTED_DISEASES], &counts, &rows);
            write_atomic(&dir.join("f1_table.csv"), t.to_csv().as_bytes())?;
            files.push("f1_table.csv".into());
        }
    }
    let index = ReportIndex {
        sources: cells.iter().map(|c| c.hash.clone()).collect(),
        files,
        plots,
    };
    write_json(&dir.join("report_index.json"), &index)?;
    Ok(Outcome {
        config_hash: name.to_string(),
        artifact: Some(dir),
        ..Default::default()
    })
}

/// Positive counts per class, read from the first row of a run's F1 table.
fn counts_from_runs(opts: &RunOptions, cells: &[&Cell]) -> Vec<usize> {
    let path = opts.layout().run_dir(DOWNSTREAM, &cells[0].hash).join("f1_table.csv");
    let parsed = csv::Reader::from_path(&path).ok().and_then(|mut r| {
        let row = r.records().next()?.ok()?;
        row.iter().skip(2).map(|v| v.parse().ok()).collect::<Option<Vec<usize>>>()
    });
    parsed.unwrap_or_else(|| vec![0; REPORTED_DISEASES])
}
