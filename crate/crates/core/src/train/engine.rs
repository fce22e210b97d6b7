use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{BatchTargets, Dataset};
use super::losses::{dice_loss, inverse_prevalence_weights, per_label_cross_entropy, weighted_cross_entropy, LossOutput};
use super::spec::{LossKind, Monitor, TrainSpec};
use crate::error::{Error, Result};
use crate::metrics::{auc, dice_coefficient, ScoredSet};
use crate::model::{HeadKind, ModelBundle};
use crate::nn::{global_avg_pool, Adam, Mode, Module, Tensor};
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_monitor: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_monitor: f64,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

/// Model outputs over a dataset in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// Abnormal-class probability per image.
    Binary { scores: Vec<f64>, labels: Vec<bool> },
    /// Per-label probabilities, N×L.
    MultiLabel { scores: Vec<Vec<f64>>, labels: Vec<Vec<bool>> },
    /// Foreground probability maps and true masks, flattened per image.
    Segmentation { probs: Vec<Vec<f64>>, masks: Vec<Vec<bool>> },
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Predictions {
    fn extend(&mut self, out: &Tensor, targets: BatchTargets) {
        match (self, targets) {
            (Predictions::Binary { scores, labels }, BatchTargets::Classes(t)) => {
                for i in 0..out.n {
                    let l = out.item(i);
                    scores.push(sigmoid(l[1] as f64 - l[0] as f64));
                }
                labels.extend(t.iter().map(|&k| k == 1));
            }
            (Predictions::MultiLabel { scores, labels }, BatchTargets::MultiHot { values, labels: l }) => {
                for i in 0..out.n {
                    scores.push(out.item(i).iter().map(|&v| sigmoid(v as f64)).collect());
                    labels.push(values[i * l..(i + 1) * l].iter().map(|&v| v == 1.0).collect());
                }
            }
            (Predictions::Segmentation { probs, masks }, BatchTargets::Masks(m)) => {
                let hw = out.item_len();
                for i in 0..out.n {
                    probs.push(out.item(i).iter().map(|&v| sigmoid(v as f64)).collect());
                    masks.push(m[i * hw..(i + 1) * hw].iter().map(|&v| v == 1.0).collect());
                }
            }
            _ => unreachable!("head and target kinds are checked before prediction"),
        }
    }

    fn empty(kind: HeadKind) -> Self {
        match kind {
            HeadKind::LinearBinary => Predictions::Binary { scores: vec![], labels: vec![] },
            HeadKind::LinearMultilabel => Predictions::MultiLabel { scores: vec![], labels: vec![] },
            HeadKind::Decoder => Predictions::Segmentation { probs: vec![], masks: vec![] },
        }
    }

    /// Scored sets per output column (one for binary).
    pub fn columns(&self) -> Result<Vec<ScoredSet>> {
        match self {
            Predictions::Binary { scores, labels } => Ok(vec![ScoredSet::new(scores.clone(), labels.clone())?]),
            Predictions::MultiLabel { scores, labels } => {
                let l = scores.first().map_or(0, |r| r.len());
                (0..l)
                    .map(|c| {
                        ScoredSet::new(
                            scores.iter().map(|r| r[c]).collect(),
                            labels.iter().map(|r| r[c]).collect(),
                        )
                    })
                    .collect()
            }
            Predictions::Segmentation { .. } => Err(Error::Validation("segmentation output has no score columns".into())),
        }
    }

    /// Dice of each map thresholded at 0.5.
    pub fn dice_scores(&self) -> Result<Vec<f64>> {
        match self {
            Predictions::Segmentation { probs, masks } => probs
                .iter()
                .zip(masks)
                .map(|(p, m)| {
                    let pred: Vec<bool> = p.iter().map(|&v| v >= 0.5).collect();
                    dice_coefficient(&pred, m).map(|d| d.value)
                })
                .collect(),
            _ => Err(Error::Validation("Dice needs segmentation output".into())),
        }
    }

    /// AUC (mean over labels with both classes present) or mean Dice.
    pub fn monitor(&self, monitor: Monitor) -> Result<f64> {
        match monitor {
            Monitor::Auc => {
                let aucs: Vec<f64> = self
                    .columns()?
                    .iter()
                    .filter_map(|c| auc(c).ok())
                    .collect();
                if aucs.is_empty() {
                    return Err(Error::UndefinedMetric("no output column has both classes".into()));
                }
                Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
            }
            Monitor::Dice => {
                let d = self.dice_scores()?;
                Ok(d.iter().sum::<f64>() / d.len() as f64)
            }
        }
    }
}

fn eval_cfg(cfg: &PreprocessConfig) -> PreprocessConfig {
    cfg.clone().eval()
}

/// Eval-mode predictions over `data`.
pub fn predict(bundle: &mut ModelBundle, data: &Dataset, cfg: &PreprocessConfig, batch_size: usize) -> Result<Predictions> {
    let cfg = eval_cfg(cfg);
    let mut preds = Predictions::empty(bundle.head_kind);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = data.batch(chunk, &cfg, 0, 0)?;
        check_targets(bundle.head_kind, &b.targets)?;
        let out = bundle.forward(&b.x, Mode::EVAL, Mode::EVAL);
        preds.extend(&out, b.targets);
    }
    Ok(preds)
}

fn check_targets(kind: HeadKind, t: &BatchTargets) -> Result<()> {
    let ok = match (kind, t) {
        (HeadKind::LinearBinary, BatchTargets::Classes(c)) => c.iter().all(|&k| k < 2),
        (HeadKind::LinearMultilabel, BatchTargets::MultiHot { labels, .. }) => *labels == kind.outputs(),
        (HeadKind::Decoder, BatchTargets::Masks(_)) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Mapping(format!("dataset targets do not fit a {kind:?} head")))
    }
}

/// Supplies the monitored validation value after each epoch.
pub trait Validator {
    fn validate(&mut self, bundle: &mut ModelBundle, epoch: usize, backbone_frozen: bool) -> Result<f64>;
}

impl<F: FnMut(&mut ModelBundle, usize) -> Result<f64>> Validator for F {
    fn validate(&mut self, bundle: &mut ModelBundle, epoch: usize, _: bool) -> Result<f64> {
        self(bundle, epoch)
    }
}

/// Evaluates the monitor on a held-out dataset. With a frozen backbone the
/// pooled embeddings are computed once and reused.
pub struct SetValidator<'a> {
    pub data: &'a Dataset,
    pub cfg: PreprocessConfig,
    pub batch_size: usize,
    pub monitor: Monitor,
    cache: Option<Vec<(Tensor, BatchTargets)>>,
}

impl<'a> SetValidator<'a> {
    pub fn new(data: &'a Dataset, cfg: &PreprocessConfig, batch_size: usize, monitor: Monitor) -> Self {
        Self {
            data,
            cfg: eval_cfg(cfg),
            batch_size,
            monitor,
            cache: None,
        }
    }
}

impl Validator for SetValidator<'_> {
    fn validate(&mut self, bundle: &mut ModelBundle, _epoch: usize, backbone_frozen: bool) -> Result<f64> {
        if !backbone_frozen || bundle.classifier_mut().is_none() {
            return predict(bundle, self.data, &self.cfg, self.batch_size)?.monitor(self.monitor);
        }
        if self.cache.is_none() {
            self.cache = Some(embed_dataset(bundle, self.data, &self.cfg, self.batch_size, 0, 0)?);
        }
        let mut preds = Predictions::empty(bundle.head_kind);
        let head = bundle.classifier_mut().expect("checked above");
        for (emb, t) in self.cache.as_ref().expect("filled above") {
            let out = head.forward(emb, Mode::EVAL);
            preds.extend(&out, t.clone());
        }
        preds.monitor(self.monitor)
    }
}

fn embed_dataset(
    bundle: &mut ModelBundle,
    data: &Dataset,
    cfg: &PreprocessConfig,
    batch_size: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<(Tensor, BatchTargets)>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = data.batch(chunk, cfg, seed, stream)?;
        check_targets(bundle.head_kind, &b.targets)?;
        out.push((global_avg_pool(&bundle.backbone.forward(&b.x, Mode::EVAL)), b.targets));
    }
    Ok(out)
}

fn compute_loss(kind: &LossKind, out: &Tensor, targets: &BatchTargets, weights: &[f64]) -> Result<LossOutput> {
    let logits: Vec<f64> = out.data.iter().map(|&v| v as f64).collect();
    match (kind, targets) {
        (LossKind::WeightedCrossEntropy { .. }, BatchTargets::Classes(t)) => {
            weighted_cross_entropy(&logits, out.item_len(), t, weights)
        }
        (LossKind::PerLabelCrossEntropy, BatchTargets::MultiHot { values, .. }) => per_label_cross_entropy(&logits, values),
        (LossKind::DiceLoss, BatchTargets::Masks(m)) => dice_loss(&logits, m, out.n),
        _ => Err(Error::Config(format!("loss {kind:?} does not fit the dataset targets"))),
    }
}

fn snapshot(bundle: &ModelBundle) -> Vec<Vec<f32>> {
    bundle.named_params("").into_iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(bundle: &mut ModelBundle, snap: Vec<Vec<f32>>) {
    for ((_, p), v) in bundle.named_params_mut("").into_iter().zip(snap) {
        p.value = v;
    }
}

/// Train with the monitor evaluated on `val`.
pub fn train(
    bundle: ModelBundle,
    spec: &TrainSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<(ModelBundle, TrainingLog)> {
    if val.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    let mut v = SetValidator::new(val, cfg, spec.batch_size, spec.early_stop.monitor);
    train_with(bundle, spec, train, &mut v, cfg, seed)
}

/// Training loop with early stopping; returns the best-monitor weights.
pub fn train_with(
    mut bundle: ModelBundle,
    spec: &TrainSpec,
    train: &Dataset,
    validator: &mut dyn Validator,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<(ModelBundle, TrainingLog)> {
    spec.validate()?;
    spec.check_head(bundle.head_kind)?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let frozen = spec.protocol.freezes_backbone();
    let weights = match &spec.loss {
        LossKind::WeightedCrossEntropy { class_weights: Some(w) } => w.clone(),
        LossKind::WeightedCrossEntropy { class_weights: None } => {
            inverse_prevalence_weights(&train.class_counts(bundle.head_kind.outputs()))?
        }
        _ => Vec::new(),
    };
    let train_cfg = cfg.clone().train();
    // frozen backbone and deterministic inputs: embeddings never change
    let cached = if frozen && train_cfg.augmentations.is_empty() && bundle.classifier_mut().is_some() {
        Some(embed_dataset(&mut bundle, train, &train_cfg, 1, seed, 0)?)
    } else {
        None
    };
    let mut adam = Adam::new(spec.adam());
    let mut log = TrainingLog {
        best_monitor: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for epoch in 1..=spec.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            bundle.zero_grad();
            let loss = if let Some(cache) = &cached {
                let embs: Vec<Tensor> = chunk.iter().map(|&i| cache[i].0.clone()).collect();
                let targets = merge_targets(chunk.iter().map(|&i| &cache[i].1))?;
                let head = bundle.classifier_mut().expect("cache implies classifier");
                let out = head.forward(&Tensor::stack(&embs), Mode::TRAIN);
                let l = compute_loss(&spec.loss, &out, &targets, &weights)?;
                head.backward(&grad_tensor(&out, &l.grad));
                l.loss
            } else {
                let b = train.batch(chunk, &train_cfg, seed, epoch as u64)?;
                check_targets(bundle.head_kind, &b.targets)?;
                let bb_mode = if frozen { Mode::EVAL } else { Mode::TRAIN };
                let out = bundle.forward(&b.x, bb_mode, Mode::TRAIN);
                let l = compute_loss(&spec.loss, &out, &b.targets, &weights)?;
                bundle.backward(&grad_tensor(&out, &l.grad), !frozen);
                l.loss
            };
            if !loss.is_finite() {
                return Err(Error::Training(format!("training loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            if frozen {
                adam.step(bundle.head_params_mut());
            } else {
                adam.step(bundle.named_params_mut(""));
            }
        }
        let monitor = validator.validate(&mut bundle, epoch, frozen)?;
        if monitor.is_nan() {
            return Err(Error::Training(format!(
                "validation monitor is NaN after epoch {epoch} (train loss {:.6})",
                loss_sum / train.len() as f64
            )));
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_monitor: monitor,
            lr: spec.learning_rate,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: loss {:.5} monitor {monitor:.5}", loss_sum / train.len() as f64);
        if monitor > log.best_monitor {
            log.best_monitor = monitor;
            log.best_epoch = epoch;
            best = Some(snapshot(&bundle));
        } else if epoch - log.best_epoch >= spec.early_stop.patience {
            log::info!("early stop at epoch {epoch}; best epoch {}", log.best_epoch);
            break;
        }
    }
    if let Some(s) = best {
        restore(&mut bundle, s);
    }
    Ok((bundle, log))
}

fn grad_tensor(out: &Tensor, g: &[f64]) -> Tensor {
    Tensor::from_vec(out.n, out.c, out.h, out.w, g.iter().map(|&v| v as f32).collect())
}

fn merge_targets<'a>(items: impl Iterator<Item = &'a BatchTargets>) -> Result<BatchTargets> {
    let mut merged: Option<BatchTargets> = None;
    for t in items {
        merged = Some(match (merged, t) {
            (None, t) => t.clone(),
            (Some(BatchTargets::Classes(mut a)), BatchTargets::Classes(b)) => {
                a.extend(b);
                BatchTargets::Classes(a)
            }
            (Some(BatchTargets::MultiHot { mut values, labels }), BatchTargets::MultiHot { values: v, .. }) => {
                values.extend(v);
                BatchTargets::MultiHot { values, labels }
            }
            _ => return Err(Error::Validation("mixed target kinds in dataset".into())),
        });
    }
    merged.ok_or_else(|| Error::Validation("empty batch".into()))
}
