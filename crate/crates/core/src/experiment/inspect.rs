use super::config::ExperimentConfig;
use super::run::{fold_checkpoint_id, guarded, write_json, Outcome, RunOptions};
use crate::data::{load_manifest, DatasetManifest, TaskKind, DISEASE_NAMES};
use crate::error::{Error, Result};
use crate::explain::{grad_cam, render_outputs, tsne_project};
use crate::model::{CheckpointStore, HeadKind, ModelBundle};
use crate::preprocess::{denormalize, ImageU8, PreprocessConfig, STANDARD_RESOLUTIONS};
use crate::train::Dataset;

pub const EXPLAIN: &str = "explain";

/// Convert a normalized `[1, 3, R, R]` tensor back to an RGB image.
pub fn tensor_image(x: &crate::nn::Tensor, cfg: &PreprocessConfig) -> Result<ImageU8> {
    let data = denormalize(x, cfg).into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    ImageU8::new(x.h, x.w, 3, data)
}

fn class_name(manifest: &DatasetManifest, i: usize) -> String {
    match manifest.task_kind {
        TaskKind::MultiDisease => {
            let t = manifest.disease_target(i);
            t.iter()
                .position(|&v| v == 1.0)
                .map_or("Normal".into(), |c| DISEASE_NAMES[c].to_string())
        }
        _ => match manifest.binary_target(i) {
            Some(true) => "Abnormal".into(),
            _ => "Normal".into(),
        },
    }
}

/// Pooled embeddings of every example, in order.
pub fn embeddings(bundle: &mut ModelBundle, data: &Dataset, cfg: &PreprocessConfig, batch: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch.max(1)) {
        let b = data.batch(chunk, cfg, 0, 0)?;
        let e = bundle.embed(&b.x);
        for i in 0..e.n {
            out.push(e.item(i).iter().map(|&v| v as f64).collect());
        }
    }
    Ok(out)
}

/// Grad-CAM overlays for the first images of the manifest and a t-SNE
/// projection of all usable records, written under `explain/<hash>/`.
pub fn cmd_explain(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let layout = opts.layout();
    let hash = cfg.section_hash(EXPLAIN);
    let ex = &cfg.explain;
    let store = CheckpointStore::new(layout.checkpoints())?;
    let id = ex.checkpoint.clone().unwrap_or_else(|| fold_checkpoint_id(cfg, 0));
    let meta = store.meta(&id)?;
    if meta.head == HeadKind::Decoder {
        return Err(Error::Config(format!("explain: checkpoint {id} has no classification head")));
    }
    let mut bundle = store.load_bundle(&id)?;
    let task = match meta.head {
        HeadKind::LinearMultilabel => TaskKind::MultiDisease,
        _ => TaskKind::Abnormality,
    };
    let manifest = load_manifest(&cfg.manifest, task)?;
    let usable = manifest.usable_indices();
    let data = Dataset::from_manifest(&manifest, &usable, task)?;
    let mut pre = cfg.preprocess_config().eval();
    pre.resolution = meta.resolution;
    pre.allow_custom_resolution = !STANDARD_RESOLUTIONS.contains(&meta.resolution);
    let run_dir = layout.explain().join(&hash);
    let mut notices = Vec::new();

    guarded(&layout, cfg, &hash, EXPLAIN, &run_dir, |entry| {
        let mut maps = Vec::new();
        for i in 0..data.len().min(ex.max_images) {
            let b = data.batch(&[i], &pre, 0, 0)?;
            let map = grad_cam(&mut bundle, &b.x, ex.target_class, Some(ex.stage), &data.examples[i].record_ref)?;
            if map.degenerate {
                notices.push(format!("Grad-CAM map for {} is degenerate", map.record_ref));
            }
            maps.push((map, tensor_image(&b.x, &pre)?));
        }
        let mut tsne = ex.tsne.clone();
        let n = data.len();
        if n as f64 <= 3.0 * tsne.perplexity {
            let p = ((n.saturating_sub(1)) / 3) as f64;
            notices.push(format!("t-SNE perplexity lowered from {} to {p} for {n} points", tsne.perplexity));
            tsne.perplexity = p;
        }
        let mut projections = Vec::new();
        if tsne.perplexity >= 1.0 {
            let emb = embeddings(&mut bundle, &data, &pre, 16)?;
            let labels: Vec<String> = usable.iter().map(|&i| class_name(&manifest, i)).collect();
            projections.push((tsne_project(&emb, &labels, &tsne, cfg.seed)?, manifest.name.clone()));
        } else {
            notices.push("too few records for a t-SNE projection".into());
        }
        render_outputs(&maps, &projections, &run_dir)?;
        write_json(
            &run_dir.join("provenance.json"),
            &serde_json::json!({
                "config_hash": hash,
                "checkpoint": id,
                "checkpoint_config_hash": meta.config_hash,
                "notices": notices,
            }),
        )?;
        entry.checkpoints = vec![id.clone()];
        Ok(())
    })?;
    Ok(Outcome {
        config_hash: hash,
        notices,
        checkpoints: vec![id],
        artifact: Some(run_dir),
        ..Default::default()
    })
}
