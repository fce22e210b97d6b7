//! Backbones, task heads, checkpoints and the initialization regimes.

mod bundle;
mod checkpoint;
mod heads;
mod resnet;
mod zoo;

pub use bundle::{Head, ModelBundle, Regime, StageTag};
pub use checkpoint::{load_into, read_blobs, write_blobs, BlobMap, CheckpointMeta, CheckpointStore};
pub use heads::{ClassifierHead, Decoder, HeadKind};
pub use resnet::{Backbone, BackboneConfig};
pub use zoo::{embed, head_kind_for, init_rng, ModelZoo};
