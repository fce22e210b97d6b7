use super::dataset::Dataset;
use super::engine::{train, TrainingLog};
use super::spec::{Protocol, TrainSpec};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::model::{CheckpointMeta, ModelZoo, Regime, StageTag};
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone)]
pub struct UpstreamOutcome {
    pub checkpoint_id: String,
    pub meta: CheckpointMeta,
    pub log: TrainingLog,
    /// SHA-256 of the backbone before training started.
    pub initial_backbone_checksum: String,
}

/// Where an upstream run starts and what it records.
#[derive(Debug, Clone)]
pub struct UpstreamRequest<'a> {
    pub regime: Regime,
    pub resolution: u32,
    pub seed: u64,
    pub checkpoint_id: String,
    pub config_hash: String,
    /// Explicit general checkpoint for `general_fundus`; otherwise resolved.
    pub general_checkpoint: Option<&'a str>,
}

/// Binary normal/abnormal pretraining. `general` produces the general-image
/// weights; `fundus` starts from scratch; `general_fundus` starts from the
/// general checkpoint.
pub fn pretrain_upstream(
    zoo: &ModelZoo,
    req: &UpstreamRequest<'_>,
    spec: &TrainSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &PreprocessConfig,
) -> Result<UpstreamOutcome> {
    let (start, mut provenance) = match req.regime {
        Regime::General => (Regime::Scratch, vec![StageTag::GeneralInit]),
        Regime::Fundus => (Regime::Scratch, vec![StageTag::ScratchInit, StageTag::FundusPretrained]),
        Regime::GeneralFundus => (Regime::General, vec![StageTag::GeneralInit, StageTag::FundusPretrained]),
        Regime::Scratch => {
            return Err(Error::Config("scratch is not an upstream regime".into()));
        }
    };
    if spec.protocol != Protocol::FullTrain {
        return Err(Error::Config("upstream training uses the full_train protocol".into()));
    }
    let bundle = zoo.build_model(
        start,
        TaskKind::Abnormality,
        req.resolution,
        req.seed,
        req.general_checkpoint,
    )?;
    let initial_backbone_checksum = bundle.backbone_checksum();
    if start == Regime::General {
        let id = zoo
            .resolve_checkpoint(Regime::General, req.resolution, req.general_checkpoint)?
            .expect("general regime resolves to a checkpoint");
        let (meta, _) = zoo.store.load_blobs(&id)?;
        let expected: std::collections::BTreeMap<_, _> =
            meta.checksums.into_iter().filter(|(k, _)| k.starts_with("backbone.")).collect();
        if expected != bundle.backbone_blob_checksums() {
            return Err(Error::Training(format!(
                "stage-2 starting backbone differs from general checkpoint {id}"
            )));
        }
    }
    let (mut bundle, log) = train(bundle, spec, train_set, val_set, cfg, req.seed)?;
    bundle.regime = req.regime;
    std::mem::swap(&mut bundle.provenance, &mut provenance);
    bundle.resolution_trained_at = req.resolution;
    let meta = CheckpointMeta {
        id: req.checkpoint_id.clone(),
        regime: req.regime,
        provenance: bundle.provenance.clone(),
        resolution: req.resolution,
        epoch: log.best_epoch,
        val_metric: Some(log.best_monitor),
        config_hash: req.config_hash.clone(),
        rng_seed: req.seed,
        backbone: bundle.backbone.config,
        head: bundle.head_kind,
        mlp_head: zoo.mlp_head,
        checksums: Default::default(),
    };
    let meta = zoo.store.save(&bundle, meta)?;
    Ok(UpstreamOutcome {
        checkpoint_id: meta.id.clone(),
        meta,
        log,
        initial_backbone_checksum,
    })
}
