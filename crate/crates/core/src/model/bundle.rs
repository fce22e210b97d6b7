use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::heads::{ClassifierHead, Decoder, HeadKind};
use super::resnet::Backbone;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, join, Mode, Module, Param, Tensor};

/// Initialization regime of a downstream backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Scratch,
    General,
    Fundus,
    GeneralFundus,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Scratch,
        Regime::General,
        Regime::Fundus,
        Regime::GeneralFundus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Scratch => "scratch",
            Regime::General => "general",
            Regime::Fundus => "fundus",
            Regime::GeneralFundus => "general_fundus",
        }
    }

    /// Provenance a backbone carries under this regime.
    pub fn provenance(self) -> Vec<StageTag> {
        match self {
            Regime::Scratch => vec![StageTag::ScratchInit],
            Regime::General => vec![StageTag::GeneralInit],
            Regime::Fundus => vec![StageTag::ScratchInit, StageTag::FundusPretrained],
            Regime::GeneralFundus => vec![StageTag::GeneralInit, StageTag::FundusPretrained],
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Regime::Scratch => "Scratch",
            Regime::General => "General",
            Regime::Fundus => "Fundus",
            Regime::GeneralFundus => "General + Fundus",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    ScratchInit,
    GeneralInit,
    FundusPretrained,
}

#[derive(Debug, Clone)]
pub enum Head {
    Classifier(ClassifierHead),
    Decoder(Decoder),
}

/// Backbone plus task head, with the history of how the backbone was made.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub backbone: Backbone,
    pub head: Head,
    pub head_kind: HeadKind,
    pub regime: Regime,
    pub provenance: Vec<StageTag>,
    pub resolution_trained_at: u32,
    feat_hw: (usize, usize),
}

impl ModelBundle {
    pub fn new(
        backbone: Backbone,
        head: Head,
        head_kind: HeadKind,
        regime: Regime,
        provenance: Vec<StageTag>,
        resolution_trained_at: u32,
    ) -> Result<Self> {
        let b = Self {
            backbone,
            head,
            head_kind,
            regime,
            provenance,
            resolution_trained_at,
            feat_hw: (0, 0),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self.provenance.first() {
            Some(StageTag::ScratchInit) | Some(StageTag::GeneralInit) => {}
            _ => {
                return Err(Error::Validation(
                    "provenance must start with scratch_init or general_init".into(),
                ))
            }
        }
        if let Head::Classifier(h) = &self.head {
            if h.in_features() != self.backbone.config.embedding_dim() {
                return Err(Error::Validation(format!(
                    "head input width {} differs from embedding width {}",
                    h.in_features(),
                    self.backbone.config.embedding_dim()
                )));
            }
            if h.out_features() != self.head_kind.outputs() {
                return Err(Error::Validation("head width does not match head kind".into()));
            }
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.backbone.config.embedding_dim()
    }

    fn check_resolution(&self, x: &Tensor) {
        if x.h as u32 != self.resolution_trained_at || x.w as u32 != self.resolution_trained_at {
            log::warn!(
                "input {}x{} differs from training resolution {}",
                x.h,
                x.w,
                self.resolution_trained_at
            );
        }
    }

    /// Pooled final-stage features, `[n, D]`, in eval mode.
    pub fn embed(&mut self, x: &Tensor) -> Tensor {
        self.check_resolution(x);
        global_avg_pool(&self.backbone.forward(x, Mode::EVAL))
    }

    /// Classifier logits `[n, C]` or a segmentation logit map `[n, 1, H, W]`.
    pub fn forward(&mut self, x: &Tensor, backbone_mode: Mode, head_mode: Mode) -> Tensor {
        match &mut self.head {
            Head::Classifier(h) => {
                let f = self.backbone.forward(x, backbone_mode);
                self.feat_hw = (f.h, f.w);
                h.forward(&global_avg_pool(&f), head_mode)
            }
            Head::Decoder(d) => {
                let feats = self.backbone.forward_features(x, backbone_mode);
                d.forward(x, &feats, head_mode)
            }
        }
    }

    /// Backward pass from output gradients. The backbone receives gradients
    /// only when `through_backbone` is set (its forward must have recorded).
    pub fn backward(&mut self, g: &Tensor, through_backbone: bool) {
        match &mut self.head {
            Head::Classifier(h) => {
                let ge = h.backward(g);
                if through_backbone {
                    let gf = global_avg_pool_backward(&ge, self.feat_hw.0, self.feat_hw.1);
                    self.backbone.backward(vec![None, None, None, None, Some(gf)]);
                }
            }
            Head::Decoder(d) => {
                let grads = d.backward(g);
                if through_backbone {
                    self.backbone.backward(grads);
                }
            }
        }
    }

    pub fn classifier_mut(&mut self) -> Option<&mut ClassifierHead> {
        match &mut self.head {
            Head::Classifier(h) => Some(h),
            Head::Decoder(_) => None,
        }
    }

    pub fn backbone_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.backbone.named_params_mut("backbone")
    }

    pub fn head_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        match &mut self.head {
            Head::Classifier(h) => h.params_mut("head", &mut out),
            Head::Decoder(d) => d.params_mut("head", &mut out),
        }
        out
    }

    pub fn backbone_checksum(&self) -> String {
        self.backbone.checksum()
    }

    /// SHA-256 of every blob, keyed by layer path.
    pub fn blob_checksums(&self) -> BTreeMap<String, String> {
        self.named_params("")
            .into_iter()
            .map(|(n, p)| (n, p.sha256()))
            .collect()
    }

    pub fn backbone_blob_checksums(&self) -> BTreeMap<String, String> {
        self.backbone
            .named_params("backbone")
            .into_iter()
            .map(|(n, p)| (n, p.sha256()))
            .collect()
    }
}

impl Module for ModelBundle {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.backbone.params(&join(prefix, "backbone"), out);
        match &self.head {
            Head::Classifier(h) => h.params(&join(prefix, "head"), out),
            Head::Decoder(d) => d.params(&join(prefix, "head"), out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.backbone.params_mut(&join(prefix, "backbone"), out);
        match &mut self.head {
            Head::Classifier(h) => h.params_mut(&join(prefix, "head"), out),
            Head::Decoder(d) => d.params_mut(&join(prefix, "head"), out),
        }
    }
}
