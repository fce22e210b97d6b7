use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetManifest, TaskKind};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::par;
use crate::preprocess::{preprocess, preprocess_pair, ImageU8, Mask, PreprocessConfig};

#[derive(Debug, Clone)]
pub enum Source<T> {
    Memory(Arc<T>),
    File(PathBuf),
}

impl Source<ImageU8> {
    pub fn get(&self) -> Result<Arc<ImageU8>> {
        match self {
            Source::Memory(v) => Ok(v.clone()),
            Source::File(p) => ImageU8::load(p).map(Arc::new),
        }
    }
}

impl Source<Mask> {
    pub fn get(&self) -> Result<Arc<Mask>> {
        match self {
            Source::Memory(v) => Ok(v.clone()),
            Source::File(p) => Mask::load(p).map(Arc::new),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Target {
    Class(usize),
    MultiHot(Vec<f64>),
    Mask(Source<Mask>),
}

#[derive(Debug, Clone)]
pub struct Example {
    pub image: Source<ImageU8>,
    pub target: Target,
    /// Image path or other stable reference back to the record.
    pub record_ref: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

/// Targets of one batch, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    MultiHot { values: Vec<f64>, labels: usize },
    Masks(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub targets: BatchTargets,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Self { examples }
    }

    /// Records `indices` of `manifest` with targets for `task`.
    pub fn from_manifest(manifest: &DatasetManifest, indices: &[usize], task: TaskKind) -> Result<Self> {
        let mut examples = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = &manifest.records[i];
            let target = match task {
                TaskKind::Abnormality => Target::Class(
                    manifest
                        .binary_target(i)
                        .ok_or_else(|| Error::Validation(format!("record {} has no label", r.image_path.display())))?
                        as usize,
                ),
                TaskKind::MultiDisease => Target::MultiHot(manifest.disease_target(i)),
                TaskKind::VesselSegmentation => Target::Mask(Source::File(manifest.resolve(
                    r.mask_path.as_ref().ok_or_else(|| {
                        Error::Validation(format!("record {} has no mask", r.image_path.display()))
                    })?,
                ))),
            };
            examples.push(Example {
                image: Source::File(manifest.resolve(&r.image_path)),
                target,
                record_ref: r.image_path.to_string_lossy().into_owned(),
            });
        }
        Ok(Self { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Per-class counts for class targets.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for e in &self.examples {
            if let Target::Class(k) = e.target {
                c[k] += 1;
            }
        }
        c
    }

    /// Decode and preprocess `indices`. Augmentation draws come from a
    /// generator keyed by `(seed, stream, index)`, so the result does not
    /// depend on how the work is spread over threads.
    pub fn batch(&self, indices: &[usize], cfg: &PreprocessConfig, seed: u64, stream: u64) -> Result<Batch> {
        let items = par::map_slice(indices, |&i| -> Result<(Tensor, Target)> {
            let e = &self.examples[i];
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.set_stream(i as u64);
            let img = e.image.get()?;
            match &e.target {
                Target::Mask(m) => {
                    let (t, mask) = preprocess_pair(&img, &*m.get()?, cfg, &mut rng)?;
                    Ok((t, Target::Mask(Source::Memory(Arc::new(mask)))))
                }
                other => Ok((preprocess(&img, cfg, &mut rng)?, other.clone())),
            }
        });
        let items: Vec<(Tensor, Target)> = items.into_iter().collect::<Result<_>>()?;
        let (tensors, items): (Vec<Tensor>, Vec<Target>) = items.into_iter().unzip();
        let x = Tensor::stack(&tensors);
        let targets = match &items[0] {
            Target::Class(_) => BatchTargets::Classes(
                items
                    .iter()
                    .map(|t| match t {
                        Target::Class(k) => Ok(*k),
                        _ => Err(Error::Validation("mixed target kinds in dataset".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
            Target::MultiHot(v) => {
                let labels = v.len();
                let mut values = Vec::with_capacity(labels * items.len());
                for t in &items {
                    match t {
                        Target::MultiHot(v) if v.len() == labels => values.extend_from_slice(v),
                        _ => return Err(Error::Validation("mixed target kinds in dataset".into())),
                    }
                }
                BatchTargets::MultiHot { values, labels }
            }
            Target::Mask(_) => {
                let mut values = Vec::with_capacity(x.len() / 3);
                for t in &items {
                    match t {
                        Target::Mask(Source::Memory(m)) => values.extend(m.data.iter().map(|&v| v as f64)),
                        _ => return Err(Error::Validation("mixed target kinds in dataset".into())),
                    }
                }
                BatchTargets::Masks(values)
            }
        };
        Ok(Batch { x, targets })
    }
}
