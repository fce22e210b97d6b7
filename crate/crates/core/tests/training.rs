use std::sync::Arc;

use fundus_core::data::TaskKind;
use fundus_core::model::{BackboneConfig, CheckpointStore, HeadKind, ModelBundle, ModelZoo, Regime};
use fundus_core::preprocess::PreprocessConfig;
use fundus_core::train::{train, train_with, Dataset, Example, Protocol, Source, Target, TrainSpec};
use fundus_core::{synth, Error};

fn setup(n: usize) -> (tempfile::TempDir, ModelZoo, Dataset, PreprocessConfig) {
    let dir = tempfile::tempdir().unwrap();
    let zoo = ModelZoo::new(CheckpointStore::new(dir.path()).unwrap(), BackboneConfig::tiny());
    let data = Dataset::new(
        synth::abnormality_images(n, 32, 0.5, 4)
            .into_iter()
            .enumerate()
            .map(|(i, (im, a))| Example {
                image: Source::Memory(Arc::new(im)),
                target: Target::Class(a as usize),
                record_ref: format!("r{i}"),
            })
            .collect(),
    );
    let mut cfg = PreprocessConfig::new(32);
    cfg.augmentations = vec![];
    (dir, zoo, data, cfg)
}

fn spec(protocol: Protocol, epochs: usize, patience: usize) -> TrainSpec {
    let mut s = TrainSpec::for_head(HeadKind::LinearBinary, protocol);
    s.learning_rate = 1e-3;
    s.batch_size = 4;
    s.max_epochs = epochs;
    s.early_stop.patience = patience;
    s
}

fn full_checksum(b: &ModelBundle) -> String {
    format!("{:?}", b.blob_checksums())
}

#[test]
fn early_stop_restores_best_epoch() {
    let (_d, zoo, data, cfg) = setup(8);
    let bundle = zoo.build_model(Regime::Scratch, TaskKind::Abnormality, 32, 1, None).unwrap();
    let monitors = [0.5, 0.7, 0.6, 0.65, 0.69, 0.9];
    let mut seen = Vec::new();
    let mut stub = |b: &mut ModelBundle, epoch: usize| -> fundus_core::Result<f64> {
        seen.push(full_checksum(b));
        Ok(monitors[epoch - 1])
    };
    let (out, log) = train_with(bundle, &spec(Protocol::FineTune, 6, 3), &data, &mut stub, &cfg, 0).unwrap();
    assert_eq!(log.best_epoch, 2);
    assert_eq!(log.best_monitor, 0.7);
    assert_eq!(log.records.len(), 5, "stops once 3 epochs pass without improvement");
    assert_eq!(log.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert_eq!(full_checksum(&out), seen[1]);
    assert_ne!(seen[1], seen[4]);
}

#[test]
fn nan_monitor_aborts() {
    let (_d, zoo, data, cfg) = setup(8);
    let bundle = zoo.build_model(Regime::Scratch, TaskKind::Abnormality, 32, 1, None).unwrap();
    let mut stub = |_: &mut ModelBundle, _: usize| -> fundus_core::Result<f64> { Ok(f64::NAN) };
    let err = train_with(bundle, &spec(Protocol::FineTune, 3, 2), &data, &mut stub, &cfg, 0).unwrap_err();
    assert!(matches!(err, Error::Training(_)), "{err}");
}

#[test]
fn linear_probe_keeps_backbone_bits() {
    let (_d, zoo, data, cfg) = setup(12);
    let (tr, va) = (data.subset(&(0..8).collect::<Vec<_>>()), data.subset(&(8..12).collect::<Vec<_>>()));
    for (protocol, frozen) in [(Protocol::LinearProbe, true), (Protocol::FineTune, false)] {
        let bundle = zoo.build_model(Regime::Scratch, TaskKind::Abnormality, 32, 1, None).unwrap();
        let before = bundle.backbone_checksum();
        let head_before = full_checksum(&bundle);
        let (out, _) = train(bundle, &spec(protocol, 2, 5), &tr, &va, &cfg, 3).unwrap();
        assert_eq!(out.backbone_checksum() == before, frozen, "{protocol:?}");
        assert_ne!(full_checksum(&out), head_before, "{protocol:?} updated nothing");
    }
}

#[test]
fn same_seed_same_losses() {
    let (_d, zoo, data, cfg) = setup(12);
    let (tr, va) = (data.subset(&(0..8).collect::<Vec<_>>()), data.subset(&(8..12).collect::<Vec<_>>()));
    let run = || {
        let b = zoo.build_model(Regime::Scratch, TaskKind::Abnormality, 32, 7, None).unwrap();
        train(b, &spec(Protocol::FineTune, 2, 5), &tr, &va, &cfg, 11).unwrap().1.losses()
    };
    assert_eq!(run(), run());
}

#[test]
fn wrong_loss_for_head_is_config_error() {
    let mut s = spec(Protocol::FineTune, 1, 1);
    s.loss = fundus_core::train::LossKind::DiceLoss;
    assert!(matches!(s.check_head(HeadKind::LinearBinary), Err(Error::Config(_))));
}
