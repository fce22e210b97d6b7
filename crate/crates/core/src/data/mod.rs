//! Dataset manifests, patient-grouped cross-validation splits and the
//! stress-test fraction sampler.

mod manifest;
mod record;
mod sampler;
mod splits;

pub use manifest::{load_manifest, parse_manifest, DatasetManifest, LabelTarget, TaskKind, MANIFEST_HEADER};
pub use record::{
    BinaryLabel, DiseaseLabels, FundusRecord, QualityFlag, DISEASE_NAMES, REPORTED_DISEASES,
};
pub use sampler::{class_quotas, sample_fraction};
pub use splits::{make_splits, Grouping, SplitPlan};
