use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bundle::{Head, ModelBundle, Regime, StageTag};
use super::checkpoint::{load_into, CheckpointStore};
use super::heads::{ClassifierHead, Decoder, HeadKind};
use super::resnet::{Backbone, BackboneConfig};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Builds bundles for the four initialization regimes.
#[derive(Debug, Clone)]
pub struct ModelZoo {
    pub store: CheckpointStore,
    /// Architecture for scratch-initialized backbones.
    pub backbone: BackboneConfig,
    /// Use the two-layer perceptron classifier instead of a linear one.
    pub mlp_head: bool,
}

/// Deterministic generator for one initialization stream.
pub fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const BACKBONE_STREAM: u64 = 1;
const HEAD_STREAM: u64 = 2;

pub fn head_kind_for(task: TaskKind) -> HeadKind {
    match task {
        TaskKind::Abnormality => HeadKind::LinearBinary,
        TaskKind::MultiDisease => HeadKind::LinearMultilabel,
        TaskKind::VesselSegmentation => HeadKind::Decoder,
    }
}

impl ModelZoo {
    pub fn new(store: CheckpointStore, backbone: BackboneConfig) -> Self {
        Self {
            store,
            backbone,
            mlp_head: false,
        }
    }

    /// Checkpoint id holding the starting backbone for `regime`, if any.
    pub fn resolve_checkpoint(
        &self,
        regime: Regime,
        resolution: u32,
        explicit: Option<&str>,
    ) -> Result<Option<String>> {
        if regime == Regime::Scratch {
            return Ok(None);
        }
        let provenance = regime.provenance();
        if let Some(id) = explicit {
            let meta = self.store.meta(id)?;
            if meta.provenance != provenance {
                return Err(Error::Config(format!(
                    "checkpoint {id} has provenance {:?}, regime {regime} needs {:?}",
                    meta.provenance, provenance
                )));
            }
            return Ok(Some(id.to_string()));
        }
        // general weights are resolution-agnostic; fundus-pretrained ones are not
        let found = match regime {
            Regime::General => self.store.find(&provenance, Some(resolution))?,
            _ => self
                .store
                .find(&provenance, Some(resolution))?
                .filter(|m| m.resolution == resolution),
        };
        match found {
            Some(m) => Ok(Some(m.id)),
            None => Err(Error::MissingCheckpoint {
                id: format!("{regime}@r{resolution}"),
                path: self.store.root.clone(),
            }),
        }
    }

    fn backbone_for(
        &self,
        regime: Regime,
        resolution: u32,
        seed: u64,
        checkpoint: Option<&str>,
    ) -> Result<(Backbone, Vec<StageTag>)> {
        match self.resolve_checkpoint(regime, resolution, checkpoint)? {
            None => {
                let mut rng = init_rng(seed, BACKBONE_STREAM);
                Ok((Backbone::new(self.backbone, &mut rng), regime.provenance()))
            }
            Some(id) => {
                let (meta, blobs) = self.store.load_blobs(&id)?;
                if meta.backbone != self.backbone {
                    log::info!("using checkpoint architecture {:?} from {id}", meta.backbone);
                }
                let mut bb = Backbone::new(meta.backbone, &mut init_rng(0, BACKBONE_STREAM));
                load_into(&mut bb, "backbone", &blobs)?;
                Ok((bb, meta.provenance))
            }
        }
    }

    /// Classification bundle: regime backbone plus a freshly initialized head.
    pub fn build_model(
        &self,
        regime: Regime,
        task: TaskKind,
        resolution: u32,
        seed: u64,
        checkpoint: Option<&str>,
    ) -> Result<ModelBundle> {
        if task == TaskKind::VesselSegmentation {
            return self.build_segmentation_model(regime, resolution, seed, checkpoint);
        }
        let (backbone, provenance) = self.backbone_for(regime, resolution, seed, checkpoint)?;
        let kind = head_kind_for(task);
        let mut rng = init_rng(seed, HEAD_STREAM);
        let d = backbone.config.embedding_dim();
        let head = if self.mlp_head {
            ClassifierHead::mlp(d, kind.outputs(), &mut rng)
        } else {
            ClassifierHead::linear(d, kind.outputs(), &mut rng)
        };
        ModelBundle::new(backbone, Head::Classifier(head), kind, regime, provenance, resolution)
    }

    /// Segmentation bundle: regime encoder plus a U-Net decoder.
    pub fn build_segmentation_model(
        &self,
        regime: Regime,
        resolution: u32,
        seed: u64,
        checkpoint: Option<&str>,
    ) -> Result<ModelBundle> {
        let (backbone, provenance) = self.backbone_for(regime, resolution, seed, checkpoint)?;
        let mut rng = init_rng(seed, HEAD_STREAM);
        let decoder = Decoder::new(backbone.config.feature_channels(), &mut rng);
        ModelBundle::new(
            backbone,
            Head::Decoder(decoder),
            HeadKind::Decoder,
            regime,
            provenance,
            resolution,
        )
    }
}

/// Pooled embeddings of a batch, `[B, D]`.
pub fn embed(bundle: &mut ModelBundle, batch: &Tensor) -> Tensor {
    bundle.embed(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CheckpointMeta;
    use crate::nn::{Mode, Module};

    fn zoo(dir: &std::path::Path) -> ModelZoo {
        ModelZoo::new(CheckpointStore::new(dir).unwrap(), BackboneConfig::tiny())
    }

    fn save_upstream(zoo: &ModelZoo, regime: Regime, res: u32, seed: u64) -> (String, String) {
        let mut b = zoo
            .build_model(Regime::Scratch, TaskKind::Abnormality, res, seed, None)
            .unwrap();
        b.provenance = regime.provenance();
        b.regime = regime;
        let id = format!("{regime}-r{res}-test");
        let meta = CheckpointMeta {
            id: id.clone(),
            regime,
            provenance: regime.provenance(),
            resolution: res,
            epoch: 1,
            val_metric: None,
            config_hash: "x".into(),
            rng_seed: seed,
            backbone: b.backbone.config,
            head: b.head_kind,
            mlp_head: false,
            checksums: Default::default(),
        };
        zoo.store.save(&b, meta).unwrap();
        (id, b.backbone_checksum())
    }

    #[test]
    fn scratch_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let a = z.build_model(Regime::Scratch, TaskKind::Abnormality, 64, 3, None).unwrap();
        let b = z.build_model(Regime::Scratch, TaskKind::Abnormality, 64, 3, None).unwrap();
        assert_eq!(a.provenance, vec![StageTag::ScratchInit]);
        assert_eq!(a.checksum(), b.checksum());
        let c = z.build_model(Regime::Scratch, TaskKind::Abnormality, 64, 4, None).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn multi_disease_head_has_eight_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let mut b = z.build_model(Regime::Scratch, TaskKind::MultiDisease, 32, 0, None).unwrap();
        let x = Tensor::zeros(1, 3, 32, 32);
        let y = b.forward(&x, Mode::EVAL, Mode::EVAL);
        assert_eq!((y.n, y.c), (1, 8));
    }

    #[test]
    fn fundus_regimes_load_upstream_backbone_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let (_, sum) = save_upstream(&z, Regime::GeneralFundus, 64, 9);
        let b = z.build_model(Regime::GeneralFundus, TaskKind::Abnormality, 64, 1, None).unwrap();
        assert_eq!(b.backbone_checksum(), sum);
        assert_eq!(b.provenance, vec![StageTag::GeneralInit, StageTag::FundusPretrained]);
        // head swap keeps the backbone
        let m = z.build_model(Regime::GeneralFundus, TaskKind::MultiDisease, 64, 2, None).unwrap();
        assert_eq!(m.backbone_checksum(), sum);
        let s = z.build_segmentation_model(Regime::GeneralFundus, 64, 5, None).unwrap();
        let s2 = z.build_segmentation_model(Regime::GeneralFundus, 64, 6, None).unwrap();
        assert_eq!(s.backbone_checksum(), sum);
        assert_eq!(s2.backbone_checksum(), sum);
        assert_ne!(s.checksum(), s2.checksum());
    }

    #[test]
    fn missing_upstream_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        match z.build_model(Regime::Fundus, TaskKind::Abnormality, 512, 0, None) {
            Err(Error::MissingCheckpoint { id, .. }) => assert_eq!(id, "fundus@r512"),
            other => panic!("unexpected {other:?}"),
        }
        // wrong resolution does not satisfy a fundus regime
        save_upstream(&z, Regime::Fundus, 64, 1);
        assert!(z.build_model(Regime::Fundus, TaskKind::Abnormality, 128, 0, None).is_err());
        assert!(z.build_model(Regime::Fundus, TaskKind::Abnormality, 64, 0, None).is_ok());
    }

    #[test]
    fn segmentation_output_matches_input_and_all_resolutions_run() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let mut s = z.build_segmentation_model(Regime::Scratch, 64, 0, None).unwrap();
        for res in [32usize, 64, 96] {
            let y = s.forward(&Tensor::zeros(1, 3, res, res), Mode::EVAL, Mode::EVAL);
            assert_eq!((y.c, y.h, y.w), (1, res, res));
        }
    }

    #[test]
    fn embed_deterministic_and_width() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let mut b = z.build_model(Regime::Scratch, TaskKind::Abnormality, 32, 0, None).unwrap();
        let mut rng = init_rng(1, 0);
        let one = Tensor::randn(1, 3, 32, 32, &mut rng);
        let batch = Tensor::stack(&[one.clone(), one]);
        let e = embed(&mut b, &batch);
        assert_eq!(e.c, b.embedding_dim());
        assert_eq!(e.item(0), e.item(1));
    }

    #[test]
    fn checkpoint_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let (id, _) = save_upstream(&z, Regime::Fundus, 64, 2);
        let loaded = z.store.load_bundle(&id).unwrap();
        let meta = z.store.meta(&id).unwrap();
        assert_eq!(loaded.blob_checksums(), meta.checksums);
        let path = z.store.weights_path(&id);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x55;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(z.store.load_blobs(&id), Err(Error::Format(_))));
    }
    #[test]
    fn segmentation_gradients_flow_through_skips() {
        let dir = tempfile::tempdir().unwrap();
        let z = zoo(dir.path());
        let mut s = z.build_segmentation_model(Regime::Scratch, 32, 3, None).unwrap();
        let mut rng = init_rng(7, 0);
        let x = Tensor::randn(1, 3, 32, 32, &mut rng);
        let y = s.forward(&x, Mode::EVAL_GRAD, Mode::EVAL_GRAD);
        let r: Vec<f32> = (0..y.len()).map(|i| ((i * 29) % 11) as f32 / 11.0 - 0.5).collect();
        s.zero_grad();
        s.backward(&Tensor::from_vec(y.n, y.c, y.h, y.w, r.clone()), true);
        let names: Vec<String> = s.named_params("").into_iter().map(|(n, _)| n).collect();
        for target in [
            "backbone.conv1.weight",
            "backbone.layer1.0.conv3.weight",
            "backbone.layer2.0.conv1.weight",
            "backbone.layer4.0.conv2.weight",
            "head.up0.conv.weight",
            "head.up3.conv.weight",
            "head.out.weight",
        ] {
            let idx = names.iter().position(|n| n == target).unwrap();
            let analytic = s.named_params("")[idx].1.grad[1] as f64;
            let base = s.named_params("")[idx].1.value[1];
            let mut eval = |v: f32| -> f64 {
                s.named_params_mut("")[idx].1.value[1] = v;
                let y = s.forward(&x, Mode::EVAL, Mode::EVAL);
                y.data.iter().zip(&r).map(|(a, b)| (*a * *b) as f64).sum()
            };
            // ReLU and max-pool kinks make any single step unreliable in f32;
            // accept the best of a few step sizes.
            let (rel, numeric) = [1e-3f32, 3e-4, 1e-4]
                .iter()
                .map(|&h| {
                    let n = (eval(base + h) - eval(base - h)) / (2.0 * h as f64);
                    ((analytic - n).abs() / n.abs().max(1e-2), n)
                })
                .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
            eval(base);
            assert!(rel < 5e-2, "{target}: {analytic} vs {numeric}");
        }
    }
}
