//! Checkpoint files: a binary container of weight blobs keyed by layer path
//! (`<id>.weights`) and a JSON sidecar (`<id>.json`) with provenance and
//! per-blob SHA-256 checksums.
//!
//! Container layout (little endian):
//! `b"FNDW"`, `u32` version, `u32` blob count, then per blob
//! `u32` name length, name bytes, `u32` rank, `u64` dims, `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::{Head, ModelBundle, Regime, StageTag};
use super::heads::{ClassifierHead, Decoder, HeadKind};
use super::resnet::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::nn::{Module, Param};

const MAGIC: &[u8; 4] = b"FNDW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub id: String,
    pub regime: Regime,
    pub provenance: Vec<StageTag>,
    pub resolution: u32,
    pub epoch: usize,
    pub val_metric: Option<f64>,
    pub config_hash: String,
    pub rng_seed: u64,
    pub backbone: BackboneConfig,
    pub head: HeadKind,
    #[serde(default)]
    pub mlp_head: bool,
    pub checksums: BTreeMap<String, String>,
}

pub fn write_blobs(path: &Path, blobs: &[(String, &Param)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, p) in blobs {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&p.to_le_bytes());
    }
    crate::util::write_atomic(path, &buf)
}

/// Blob name → (shape, values).
pub type BlobMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

pub fn read_blobs(path: &Path) -> Result<BlobMap> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("not a weights container"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let nl = u32_at(take(4)?) as usize;
        let name = String::from_utf8(take(nl)?.to_vec()).map_err(|_| bad("blob name not utf-8"))?;
        let rank = u32_at(take(4)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let values = take(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, (shape, values));
    }
    Ok(out)
}

/// Overwrite params under `prefix` from `blobs`; every param must be present.
pub fn load_into<M: Module + ?Sized>(module: &mut M, prefix: &str, blobs: &BlobMap) -> Result<()> {
    for (name, p) in module.named_params_mut(prefix) {
        let (shape, values) = blobs
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks blob `{name}`")))?;
        if *shape != p.shape {
            return Err(Error::Format(format!(
                "blob `{name}` has shape {shape:?}, model expects {:?}",
                p.shape
            )));
        }
        p.value.copy_from_slice(values);
    }
    Ok(())
}

/// Directory of checkpoints.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    pub root: PathBuf,
}

impl CheckpointStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn weights_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.weights"))
    }

    pub fn sidecar_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.json"))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.sidecar_path(id).is_file() && self.weights_path(id).is_file()
    }

    /// Persist `bundle`; `meta.checksums` is filled in here.
    pub fn save(&self, bundle: &ModelBundle, mut meta: CheckpointMeta) -> Result<CheckpointMeta> {
        let blobs = bundle.named_params("");
        meta.checksums = blobs.iter().map(|(n, p)| (n.clone(), p.sha256())).collect();
        write_blobs(&self.weights_path(&meta.id), &blobs)?;
        let side = self.sidecar_path(&meta.id);
        crate::util::write_atomic(&side, serde_json::to_string_pretty(&meta)?.as_bytes())?;
        Ok(meta)
    }

    pub fn meta(&self, id: &str) -> Result<CheckpointMeta> {
        let side = self.sidecar_path(id);
        if !side.is_file() {
            return Err(Error::MissingCheckpoint {
                id: id.to_string(),
                path: side,
            });
        }
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Blobs of checkpoint `id`, verified against the sidecar checksums.
    pub fn load_blobs(&self, id: &str) -> Result<(CheckpointMeta, BlobMap)> {
        let meta = self.meta(id)?;
        let blobs = read_blobs(&self.weights_path(id))?;
        for (name, sum) in &meta.checksums {
            let (shape, values) = blobs
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint {id} lacks blob `{name}`")))?;
            let p = Param::new(shape.clone(), values.clone());
            if &p.sha256() != sum {
                return Err(Error::Format(format!("checksum mismatch for `{name}` in {id}")));
            }
        }
        Ok((meta, blobs))
    }

    /// Rebuild the full bundle saved under `id`.
    pub fn load_bundle(&self, id: &str) -> Result<ModelBundle> {
        let (meta, blobs) = self.load_blobs(id)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = Backbone::new(meta.backbone, &mut rng);
        let head = match meta.head {
            HeadKind::Decoder => Head::Decoder(Decoder::new(meta.backbone.feature_channels(), &mut rng)),
            kind if meta.mlp_head => {
                Head::Classifier(ClassifierHead::mlp(meta.backbone.embedding_dim(), kind.outputs(), &mut rng))
            }
            kind => Head::Classifier(ClassifierHead::linear(
                meta.backbone.embedding_dim(),
                kind.outputs(),
                &mut rng,
            )),
        };
        let mut bundle = ModelBundle::new(
            backbone,
            head,
            meta.head,
            meta.regime,
            meta.provenance.clone(),
            meta.resolution,
        )?;
        load_into(&mut bundle, "", &blobs)?;
        Ok(bundle)
    }

    pub fn list(&self) -> Result<Vec<CheckpointMeta>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for e in entries {
            let path = e.map_err(|e| Error::io(&self.root, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                let id = path.file_stem().unwrap().to_string_lossy().into_owned();
                if let Ok(m) = self.meta(&id) {
                    out.push(m);
                }
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// Checkpoint with exactly `provenance`, preferring `resolution` when
    /// given; ties resolve to the smallest id.
    pub fn find(&self, provenance: &[StageTag], resolution: Option<u32>) -> Result<Option<CheckpointMeta>> {
        let all: Vec<CheckpointMeta> = self
            .list()?
            .into_iter()
            .filter(|m| m.provenance == provenance)
            .collect();
        if let Some(r) = resolution {
            if let Some(m) = all.iter().find(|m| m.resolution == r) {
                return Ok(Some(m.clone()));
            }
        }
        Ok(all.into_iter().next())
    }
}
