use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadKind;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FullTrain,
    LinearProbe,
    FineTune,
}

impl Protocol {
    pub fn freezes_backbone(self) -> bool {
        self == Protocol::LinearProbe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    Auc,
    Dice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Weights default to inverse prevalence in the training set.
    WeightedCrossEntropy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_weights: Option<Vec<f64>>,
    },
    PerLabelCrossEntropy,
    DiceLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStop {
    pub monitor: Monitor,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            monitor: Monitor::Auc,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop: EarlyStop,
    pub loss: LossKind,
    pub protocol: Protocol,
    /// Two-layer classifier head instead of a single linear layer.
    pub mlp_head: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            betas: (0.9, 0.999),
            weight_decay: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            early_stop: EarlyStop::default(),
            loss: LossKind::WeightedCrossEntropy { class_weights: None },
            protocol: Protocol::FullTrain,
            mlp_head: false,
        }
    }
}

impl TrainSpec {
    /// Defaults with loss and monitor matched to `head`.
    pub fn for_head(head: HeadKind, protocol: Protocol) -> Self {
        let (loss, monitor) = match head {
            HeadKind::LinearBinary => (LossKind::WeightedCrossEntropy { class_weights: None }, Monitor::Auc),
            HeadKind::LinearMultilabel => (LossKind::PerLabelCrossEntropy, Monitor::Auc),
            HeadKind::Decoder => (LossKind::DiceLoss, Monitor::Dice),
        };
        Self {
            loss,
            protocol,
            early_stop: EarlyStop {
                monitor,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate as f32,
            beta1: self.betas.0 as f32,
            beta2: self.betas.1 as f32,
            weight_decay: self.weight_decay as f32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("spec.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad(format!("spec.betas must lie in [0, 1), got {:?}", self.betas));
        }
        if self.weight_decay < 0.0 {
            return bad("spec.weight_decay must be non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("spec.batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("spec.max_epochs must be positive".into());
        }
        if let LossKind::WeightedCrossEntropy { class_weights: Some(w) } = &self.loss {
            if w.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("spec.loss.class_weights must be positive, got {w:?}"));
            }
        }
        Ok(())
    }

    /// Loss and monitor must fit the head.
    pub fn check_head(&self, head: HeadKind) -> Result<()> {
        let ok = matches!(
            (&self.loss, head, self.early_stop.monitor),
            (LossKind::WeightedCrossEntropy { .. }, HeadKind::LinearBinary, Monitor::Auc)
                | (LossKind::PerLabelCrossEntropy, HeadKind::LinearMultilabel, Monitor::Auc)
                | (LossKind::DiceLoss, HeadKind::Decoder, Monitor::Dice)
        );
        if !ok {
            return Err(Error::Config(format!(
                "loss {:?} with monitor {:?} does not fit a {head:?} head",
                self.loss, self.early_stop.monitor
            )));
        }
        if let LossKind::WeightedCrossEntropy { class_weights: Some(w) } = &self.loss {
            if w.len() != head.outputs() {
                return Err(Error::Config(format!(
                    "{} class weights for {} outputs",
                    w.len(),
                    head.outputs()
                )));
            }
        }
        Ok(())
    }
}
