mod dataset;
mod engine;
mod losses;
mod spec;
mod upstream;

pub use dataset::{Batch, BatchTargets, Dataset, Example, Source, Target};
pub use engine::{predict, train, train_with, EpochRecord, Predictions, SetValidator, TrainingLog, Validator};
pub use losses::{
    dice_loss, inverse_prevalence_weights, per_label_cross_entropy, weighted_cross_entropy, LossOutput, DICE_EPS,
};
pub use spec::{EarlyStop, LossKind, Monitor, Protocol, TrainSpec};
pub use upstream::{pretrain_upstream, UpstreamOutcome, UpstreamRequest};
