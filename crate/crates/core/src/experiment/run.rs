use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::ledger::{FreezeCheck, Layout, LedgerEntry, RunStatus};
use crate::data::{load_manifest, make_splits, sample_fraction, DatasetManifest, TaskKind, DISEASE_NAMES, REPORTED_DISEASES};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_cv, auc, default_grid, f1_per_class, f1_table, select_thresholds, MetricMap, MetricReport, ScoredSet,
};
use crate::model::{CheckpointMeta, CheckpointStore, ModelZoo, Regime};
use crate::train::{pretrain_upstream, predict, train, Dataset, Predictions, Protocol, UpstreamRequest};
use crate::util::write_atomic;

pub const PRETRAIN: &str = "pretrain";
pub const DOWNSTREAM: &str = "downstream";
pub const EXTERNAL: &str = "external";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub root: PathBuf,
    pub force: bool,
}

impl RunOptions {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), force: false }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.root)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub config_hash: String,
    pub skipped: bool,
    pub notices: Vec<String>,
    pub checkpoints: Vec<String>,
    pub artifact: Option<PathBuf>,
}

/// Metric that summarizes a cell in tables and plots.
pub fn primary_metric(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Abnormality => "auc",
        TaskKind::MultiDisease => "f1_macro",
        TaskKind::VesselSegmentation => "dice",
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn skipped(entry: LedgerEntry, command: &str, label: &str) -> Outcome {
    let notice = format!("{command} {label} already complete ({})", &entry.config_hash[..12]);
    log::info!("{notice}");
    Outcome {
        config_hash: entry.config_hash,
        skipped: true,
        notices: vec![notice],
        checkpoints: entry.checkpoints,
        artifact: entry.report,
    }
}

/// Record start, run `body`, then record completion or failure. On failure
/// the run directory is moved under `quarantine/`.
pub(crate) fn guarded<F>(
    layout: &Layout,
    cfg: &ExperimentConfig,
    hash: &str,
    command: &str,
    run_dir: &Path,
    body: F,
) -> Result<LedgerEntry>
where
    F: FnOnce(&mut LedgerEntry) -> Result<()>,
{
    let ledger = layout.ledger();
    let mut entry = LedgerEntry::started(hash, command, &cfg.label());
    ledger.append(&entry)?;
    if run_dir.exists() {
        std::fs::remove_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    }
    let result = std::fs::create_dir_all(run_dir)
        .map_err(|e| Error::io(run_dir, e))
        .and_then(|_| write_json(&run_dir.join("config.json"), cfg))
        .and_then(|_| body(&mut entry));
    match result {
        Ok(()) => {
            let done = entry.finish(RunStatus::Completed);
            ledger.append(&done)?;
            Ok(done)
        }
        Err(err) => {
            let mut failed = entry.finish(RunStatus::Failed);
            failed.message = Some(err.to_string());
            if let Ok(Some(q)) = layout.quarantine_dir(run_dir, &format!("{command}-{}", &hash[..12])) {
                log::warn!("partial artifacts kept in {}", q.display());
            }
            ledger.append(&failed)?;
            Err(err)
        }
    }
}

fn zoo(layout: &Layout, cfg: &ExperimentConfig, mlp_head: bool) -> Result<ModelZoo> {
    let mut z = ModelZoo::new(CheckpointStore::new(layout.checkpoints())?, cfg.backbone.config());
    z.mlp_head = mlp_head;
    Ok(z)
}

pub fn pretrain_checkpoint_id(cfg: &ExperimentConfig) -> String {
    format!("{}-r{}-{}", cfg.regime, cfg.resolution, cfg.short_hash())
}

/// Upstream pretraining on an abnormality manifest. Fold 0 of the split plan
/// is the validation set.
pub fn cmd_pretrain(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    if cfg.task != TaskKind::Abnormality {
        return Err(Error::Config(format!(
            "task: pretraining needs an abnormality manifest, got {}",
            cfg.task.as_str()
        )));
    }
    if cfg.regime == Regime::Scratch {
        return Err(Error::Config("regime: scratch has no upstream stage".into()));
    }
    let layout = opts.layout();
    let hash = cfg.config_hash();
    if !opts.force {
        if let Some(e) = layout.ledger().completed(&hash, PRETRAIN)? {
            return Ok(skipped(e, PRETRAIN, &cfg.label()));
        }
    }
    let mut spec = cfg.train_spec();
    spec.protocol = Protocol::FullTrain;
    let pre = cfg.preprocess_config();
    let manifest = load_manifest(&cfg.manifest, TaskKind::Abnormality)?;
    let plan = make_splits(&manifest, cfg.n_folds, cfg.seed, cfg.grouping)?;
    let val_idx = plan.fold_members(0);
    let pool: Vec<usize> = plan.assignments.iter().filter(|(_, &f)| f != 0).map(|(&i, _)| i).collect();
    let train_idx = sample_fraction(&manifest, &pool, cfg.fraction, cfg.seed)?;
    let zoo = zoo(&layout, cfg, false)?;
    let run_dir = layout.run_dir(PRETRAIN, &hash);
    let id = pretrain_checkpoint_id(cfg);
    let entry = guarded(&layout, cfg, &hash, PRETRAIN, &run_dir, |entry| {
        let train_set = Dataset::from_manifest(&manifest, &train_idx, TaskKind::Abnormality)?;
        let val_set = Dataset::from_manifest(&manifest, &val_idx, TaskKind::Abnormality)?;
        let req = UpstreamRequest {
            regime: cfg.regime,
            resolution: cfg.resolution,
            seed: cfg.seed,
            checkpoint_id: id.clone(),
            config_hash: hash.clone(),
            general_checkpoint: cfg.upstream_checkpoint.as_deref(),
        };
        let out = pretrain_upstream(&zoo, &req, &spec, &train_set, &val_set, &pre)?;
        write_atomic(&run_dir.join("train_log.jsonl"), out.log.to_jsonl().as_bytes())?;
        write_json(&run_dir.join("checkpoint.json"), &out.meta)?;
        entry.checkpoints = vec![out.checkpoint_id];
        Ok(())
    })?;
    Ok(Outcome {
        config_hash: hash,
        checkpoints: entry.checkpoints,
        artifact: Some(run_dir),
        ..Default::default()
    })
}

pub fn fold_checkpoint_id(cfg: &ExperimentConfig, fold: usize) -> String {
    format!("{}-fold{fold}", cfg.short_hash())
}

/// One out-of-fold binary prediction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OofRow {
    pub record_ref: String,
    pub fold: usize,
    pub score: f64,
    pub label: bool,
}

pub fn write_oof(path: &Path, rows: &[OofRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_oof(path: &Path) -> Result<Vec<OofRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

struct FoldResult {
    metrics: MetricMap,
    thresholds: Vec<f64>,
    oof: Vec<OofRow>,
    f1: Vec<f64>,
}

fn fold_metrics(
    cfg: &ExperimentConfig,
    fold: usize,
    test_set: &Dataset,
    test: &Predictions,
    val: Option<&Predictions>,
) -> Result<FoldResult> {
    let mut metrics = MetricMap::new();
    let mut thresholds = Vec::new();
    let mut oof = Vec::new();
    let mut f1 = Vec::new();
    match test {
        Predictions::Binary { scores, labels } => {
            metrics.insert("auc".into(), auc(&ScoredSet::new(scores.clone(), labels.clone())?)?);
            for (i, ex) in test_set.examples.iter().enumerate() {
                oof.push(OofRow {
                    record_ref: ex.record_ref.clone(),
                    fold,
                    score: scores[i],
                    label: labels[i],
                });
            }
        }
        Predictions::MultiLabel { scores, labels } => {
            let val = val.expect("thresholds need validation predictions");
            thresholds = select_thresholds(&val.columns()?, &default_grid(), cfg.threshold_mode)?;
            let res = f1_per_class(scores, labels, &thresholds)?;
            f1 = res.f1[..REPORTED_DISEASES].to_vec();
            for (name, v) in DISEASE_NAMES.iter().zip(&f1) {
                metrics.insert(format!("f1_{name}"), *v);
            }
            metrics.insert("f1_macro".into(), f1.iter().sum::<f64>() / f1.len() as f64);
        }
        Predictions::Segmentation { .. } => {
            let d = test.dice_scores()?;
            metrics.insert("dice".into(), d.iter().sum::<f64>() / d.len() as f64);
        }
    }
    Ok(FoldResult { metrics, thresholds, oof, f1 })
}

fn disease_counts(manifest: &DatasetManifest) -> Vec<usize> {
    let mut counts = vec![0; REPORTED_DISEASES];
    for i in manifest.usable_indices() {
        for (c, v) in manifest.disease_target(i).iter().take(REPORTED_DISEASES).enumerate() {
            if *v == 1.0 {
                counts[c] += 1;
            }
        }
    }
    counts
}

/// Cross-validated downstream run: per fold train on the remaining folds,
/// early-stop on the next fold and evaluate on the held-out fold.
pub fn cmd_downstream(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let layout = opts.layout();
    let hash = cfg.config_hash();
    if !opts.force {
        if let Some(e) = layout.ledger().completed(&hash, DOWNSTREAM)? {
            return Ok(skipped(e, DOWNSTREAM, &cfg.label()));
        }
    }
    let spec = cfg.train_spec();
    let pre = cfg.preprocess_config();
    let manifest = load_manifest(&cfg.manifest, cfg.task)?;
    let plan = make_splits(&manifest, cfg.n_folds, cfg.seed, cfg.grouping)?;
    let zoo = zoo(&layout, cfg, spec.mlp_head)?;
    let upstream = zoo.resolve_checkpoint(cfg.regime, cfg.resolution, cfg.upstream_checkpoint.as_deref())?;
    let reference = cfg.reference_config()?;
    let run_dir = layout.run_dir(DOWNSTREAM, &hash);
    let mut notices = Vec::new();
    let report_path = run_dir.join("report.json");

    let entry = guarded(&layout, cfg, &hash, DOWNSTREAM, &run_dir, |entry| {
        write_atomic(&run_dir.join("splits.json"), plan.to_json()?.as_bytes())?;
        let mut folds = Vec::with_capacity(cfg.n_folds);
        for fold in 0..cfg.n_folds {
            let fold_seed = cfg.seed.wrapping_add(fold as u64);
            let (train_pool, val_idx, test_idx) = plan.cv_roles(fold)?;
            let train_idx = sample_fraction(&manifest, &train_pool, cfg.fraction, fold_seed)?;
            let train_set = Dataset::from_manifest(&manifest, &train_idx, cfg.task)?;
            let val_set = Dataset::from_manifest(&manifest, &val_idx, cfg.task)?;
            let test_set = Dataset::from_manifest(&manifest, &test_idx, cfg.task)?;
            log::info!(
                "{} fold {fold}: {} train / {} val / {} test",
                cfg.label(),
                train_set.len(),
                val_set.len(),
                test_set.len()
            );
            let bundle = zoo.build_model(cfg.regime, cfg.task, cfg.resolution, fold_seed, upstream.as_deref())?;
            let before = bundle.backbone_checksum();
            let (mut bundle, log) = train(bundle, &spec, &train_set, &val_set, &pre, fold_seed)?;
            let after = bundle.backbone_checksum();
            let frozen = spec.protocol.freezes_backbone();
            entry.freeze_checks.push(FreezeCheck {
                fold,
                unchanged: before == after,
                before,
                after,
                frozen,
            });
            if frozen && !entry.freeze_checks[fold].unchanged {
                return Err(Error::Training(format!("fold {fold}: frozen backbone changed during training")));
            }
            write_atomic(&run_dir.join(format!("fold{fold}_log.jsonl")), log.to_jsonl().as_bytes())?;
            let test_pred = predict(&mut bundle, &test_set, &pre, spec.batch_size)?;
            let val_pred = match cfg.task {
                TaskKind::MultiDisease => Some(predict(&mut bundle, &val_set, &pre, spec.batch_size)?),
                _ => None,
            };
            folds.push(fold_metrics(cfg, fold, &test_set, &test_pred, val_pred.as_ref())?);
            let id = fold_checkpoint_id(cfg, fold);
            zoo.store.save(
                &bundle,
                CheckpointMeta {
                    id: id.clone(),
                    regime: cfg.regime,
                    provenance: bundle.provenance.clone(),
                    resolution: cfg.resolution,
                    epoch: log.best_epoch,
                    val_metric: Some(log.best_monitor),
                    config_hash: hash.clone(),
                    rng_seed: fold_seed,
                    backbone: bundle.backbone.config,
                    head: bundle.head_kind,
                    mlp_head: spec.mlp_head,
                    checksums: BTreeMap::new(),
                },
            )?;
            entry.checkpoints.push(id);
        }

        let oof: Vec<OofRow> = folds.iter().flat_map(|f| f.oof.iter().cloned()).collect();
        let thresholds_per_fold: Vec<Vec<f64>> = folds.iter().map(|f| f.thresholds.clone()).collect();
        let f1_rows: Vec<Vec<f64>> = folds.iter().map(|f| f.f1.clone()).collect();
        let mut report = aggregate_cv(folds.into_iter().map(|f| f.metrics).collect())?;
        report.config_hash = Some(hash.clone());
        report.dataset = Some(manifest.name.clone());
        if cfg.task == TaskKind::MultiDisease {
            let l = thresholds_per_fold[0].len();
            report.thresholds = (0..l)
                .map(|c| thresholds_per_fold.iter().map(|t| t[c]).sum::<f64>() / thresholds_per_fold.len() as f64)
                .collect();
            let mean_f1: Vec<f64> = (0..REPORTED_DISEASES)
                .map(|c| f1_rows.iter().map(|r| r[c]).sum::<f64>() / f1_rows.len() as f64)
                .collect();
            let thr = report.thresholds.iter().sum::<f64>() / report.thresholds.len() as f64;
            let table = f1_table(
                &DISEASE_NAMES[..REPORTED_DISEASES],
                &disease_counts(&manifest),
                &[(cfg.regime.label().to_string(), thr, mean_f1)],
            );
            write_atomic(&run_dir.join("f1_table.csv"), table.to_csv().as_bytes())?;
        }
        if !oof.is_empty() {
            write_oof(&run_dir.join("oof.csv"), &oof)?;
        }
        if let Some(rc) = &reference {
            compare_reference(&layout, cfg, rc, &oof, &mut report, &mut notices)?;
        }
        report.notices = notices.clone();
        report.save(&report_path)?;
        entry.report = Some(report_path.clone());
        Ok(())
    })?;
    Ok(Outcome {
        config_hash: hash,
        notices,
        checkpoints: entry.checkpoints,
        artifact: Some(report_path),
        ..Default::default()
    })
}

/// Paired scored sets over the records both runs predicted, in `a`'s order.
pub fn pair_oof(a: &[OofRow], b: &[OofRow]) -> Result<(ScoredSet, ScoredSet)> {
    let lookup: BTreeMap<&str, &OofRow> = b.iter().map(|r| (r.record_ref.as_str(), r)).collect();
    if lookup.len() != a.len() {
        return Err(Error::Validation(format!(
            "paired comparison needs the same records ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut sa = (Vec::new(), Vec::new());
    let mut sb = Vec::new();
    for r in a {
        let other = lookup
            .get(r.record_ref.as_str())
            .ok_or_else(|| Error::Validation(format!("reference run lacks record {}", r.record_ref)))?;
        if other.label != r.label {
            return Err(Error::Validation(format!("label disagreement on {}", r.record_ref)));
        }
        sa.0.push(r.score);
        sa.1.push(r.label);
        sb.push(other.score);
    }
    let labels = sa.1.clone();
    Ok((ScoredSet::new(sa.0, sa.1)?, ScoredSet::new(sb, labels)?))
}

fn compare_reference(
    layout: &Layout,
    cfg: &ExperimentConfig,
    rc: &ExperimentConfig,
    oof: &[OofRow],
    report: &mut MetricReport,
    notices: &mut Vec<String>,
) -> Result<()> {
    if cfg.task != TaskKind::Abnormality {
        notices.push("DeLong comparison applies to binary AUC only; skipped".into());
        return Ok(());
    }
    let rh = rc.config_hash();
    if rh == cfg.config_hash() {
        return Ok(());
    }
    if layout.ledger().completed(&rh, DOWNSTREAM)?.is_none() {
        notices.push(format!("reference {} ({}) not complete; comparison skipped", rc.label(), &rh[..12]));
        return Ok(());
    }
    let theirs = read_oof(&layout.run_dir(DOWNSTREAM, &rh).join("oof.csv"))?;
    let (a, b) = pair_oof(oof, &theirs)?;
    report.compare(&cfg.label(), &a, &rc.label(), &b)?;
    Ok(())
}
