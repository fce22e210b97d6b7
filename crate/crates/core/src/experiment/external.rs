use super::config::ExperimentConfig;
use super::run::{guarded, Outcome, RunOptions, DOWNSTREAM, EXTERNAL};
use crate::data::{load_manifest, DatasetManifest, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_cv, auc, MetricMap, MetricReport};
use crate::model::{CheckpointStore, HeadKind};
use crate::train::{predict, Dataset, Monitor};

fn task_for(head: HeadKind) -> TaskKind {
    match head {
        HeadKind::LinearBinary => TaskKind::Abnormality,
        HeadKind::LinearMultilabel => TaskKind::MultiDisease,
        HeadKind::Decoder => TaskKind::VesselSegmentation,
    }
}

/// Check that `manifest` carries the labels a `head` checkpoint predicts.
/// Disease-only records under a binary head are collapsed to any-abnormal.
pub fn reconcile_schema(manifest: &mut DatasetManifest, head: HeadKind) -> Result<Vec<String>> {
    let usable = manifest.usable_indices();
    let mut notices = Vec::new();
    match head {
        HeadKind::LinearBinary => {
            let collapsed = usable
                .iter()
                .filter(|&&i| {
                    let r = &manifest.records[i];
                    r.binary_label.is_none() && r.disease_labels.is_some()
                })
                .count();
            if let Some(&i) = usable.iter().find(|&&i| manifest.binary_target(i).is_none()) {
                return Err(Error::Mapping(format!(
                    "record {} has no label a binary checkpoint can score",
                    manifest.records[i].image_path.display()
                )));
            }
            if collapsed > 0 {
                notices.push(format!(
                    "{collapsed} records with disease labels collapsed to any-abnormal for a binary checkpoint"
                ));
            }
        }
        HeadKind::LinearMultilabel => {
            if let Some(&i) = usable.iter().find(|&&i| manifest.records[i].disease_labels.is_none()) {
                return Err(Error::Mapping(format!(
                    "record {} has no disease labels for a multi-label checkpoint",
                    manifest.records[i].image_path.display()
                )));
            }
        }
        HeadKind::Decoder => {
            if let Some(&i) = usable.iter().find(|&&i| manifest.records[i].mask_path.is_none()) {
                return Err(Error::Mapping(format!(
                    "record {} has no mask for a segmentation checkpoint",
                    manifest.records[i].image_path.display()
                )));
            }
        }
    }
    manifest.task_kind = task_for(head);
    Ok(notices)
}

/// Evaluation-only run of trained checkpoints on a foreign manifest.
pub fn cmd_external_validate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let ext = cfg
        .external
        .as_ref()
        .ok_or_else(|| Error::Config("external: section missing".into()))?;
    let layout = opts.layout();
    let hash = cfg.section_hash("external");
    let ledger = layout.ledger();
    if !opts.force {
        if let Some(e) = ledger.completed(&hash, EXTERNAL)? {
            return Ok(Outcome {
                notices: vec![format!("external {} already complete", &hash[..12])],
                config_hash: hash,
                skipped: true,
                checkpoints: e.checkpoints,
                artifact: e.report,
            });
        }
    }
    let ids = if ext.checkpoints.is_empty() {
        ledger
            .completed(&cfg.config_hash(), DOWNSTREAM)?
            .map(|e| e.checkpoints)
            .unwrap_or_default()
    } else {
        ext.checkpoints.clone()
    };
    let store = CheckpointStore::new(layout.checkpoints())?;
    if ids.is_empty() {
        return Err(Error::MissingCheckpoint {
            id: format!("{}-fold0", &cfg.config_hash()[..12]),
            path: store.root.clone(),
        });
    }
    let metas = ids.iter().map(|id| store.meta(id)).collect::<Result<Vec<_>>>()?;
    let head = metas[0].head;
    if let Some(m) = metas.iter().find(|m| m.head != head) {
        return Err(Error::Mapping(format!("checkpoint {} has a {:?} head, expected {head:?}", m.id, m.head)));
    }
    let mut manifest = load_manifest(&ext.manifest, TaskKind::Abnormality)?;
    let notices = reconcile_schema(&mut manifest, head)?;
    for n in &notices {
        log::warn!("{n}");
    }
    let task = manifest.task_kind;
    let usable = manifest.usable_indices();
    let data = Dataset::from_manifest(&manifest, &usable, task)?;
    let run_dir = layout.external().join(&hash);
    let report_path = run_dir.join(format!("{}.json", manifest.name));
    let batch = cfg.train_spec().batch_size;

    let entry = guarded(&layout, cfg, &hash, EXTERNAL, &run_dir, |entry| {
        let mut per = Vec::new();
        for meta in &metas {
            let mut bundle = store.load_bundle(&meta.id)?;
            let mut pre = cfg.preprocess_config();
            pre.resolution = meta.resolution;
            pre.allow_custom_resolution = !crate::preprocess::STANDARD_RESOLUTIONS.contains(&meta.resolution);
            let pred = predict(&mut bundle, &data, &pre, batch)?;
            let mut m = MetricMap::new();
            match task {
                TaskKind::Abnormality => {
                    m.insert("auc".into(), auc(&pred.columns()?[0])?);
                }
                TaskKind::MultiDisease => {
                    m.insert("auc_macro".into(), pred.monitor(Monitor::Auc)?);
                }
                TaskKind::VesselSegmentation => {
                    m.insert("dice".into(), pred.monitor(Monitor::Dice)?);
                }
            }
            per.push(m);
        }
        let mut report = if per.len() >= 2 {
            aggregate_cv(per)?
        } else {
            let mean = per[0].clone();
            let std = mean.keys().map(|k| (k.clone(), 0.0)).collect();
            MetricReport { per_fold: per, mean, std, ..Default::default() }
        };
        report.dataset = Some(manifest.name.clone());
        report.config_hash = Some(hash.clone());
        report.notices = notices.clone();
        report.save(&report_path)?;
        entry.checkpoints = ids.clone();
        entry.report = Some(report_path.clone());
        Ok(())
    })?;
    Ok(Outcome {
        config_hash: hash,
        notices,
        checkpoints: entry.checkpoints,
        artifact: entry.report,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BinaryLabel, DiseaseLabels, FundusRecord};

    fn manifest(records: Vec<FundusRecord>) -> DatasetManifest {
        DatasetManifest::new("ext", TaskKind::Abnormality, records).unwrap()
    }

    #[test]
    fn disease_labels_collapse_with_notice() {
        let mut bits = [false; 8];
        bits[3] = true;
        let mut m = manifest(vec![
            FundusRecord::new("a.png", "p1").with_diseases(DiseaseLabels::from_bits(&bits)),
            FundusRecord::new("b.png", "p2").with_diseases(DiseaseLabels::from_bits(&[false; 8])),
            FundusRecord::new("c.png", "p3").with_binary(BinaryLabel::from_bit(true)),
        ]);
        let notices = reconcile_schema(&mut m, HeadKind::LinearBinary).unwrap();
        assert_eq!(notices.len(), 1);
        assert!(notices[0].starts_with("2 records"));
        assert_eq!(m.binary_target(0), Some(true));
        assert_eq!(m.binary_target(1), Some(false));
    }

    #[test]
    fn schema_mismatch_is_mapping_error() {
        let mut m = manifest(vec![FundusRecord::new("a.png", "p1").with_binary(BinaryLabel::from_bit(true))]);
        assert!(matches!(reconcile_schema(&mut m, HeadKind::LinearMultilabel), Err(Error::Mapping(_))));
        assert!(matches!(reconcile_schema(&mut m, HeadKind::Decoder), Err(Error::Mapping(_))));
    }
}
