use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::gradcam::SaliencyMap;
use super::tsne::EmbeddingProjection;
use crate::error::{Error, Result};
use crate::plot::{jet, scatter};
use crate::preprocess::ImageU8;
use crate::util::write_atomic;

/// Blend strength of the colour-mapped heatmap at its maximum.
pub const OVERLAY_ALPHA: f32 = 0.4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub artifact_type: String,
    pub record_ref: Option<String>,
    pub target_class: Option<usize>,
    pub file: String,
}

/// Overlay `map` on `image` (already at map resolution). The blend weight at
/// each pixel is `OVERLAY_ALPHA × heat`, so cold regions keep the input.
pub fn overlay(image: &ImageU8, map: &SaliencyMap) -> Result<ImageU8> {
    if (image.height, image.width) != (map.height, map.width) || image.channels != 3 {
        return Err(Error::Validation(format!(
            "overlay needs a {}x{} RGB image, got {}x{}x{}",
            map.height, map.width, image.height, image.width, image.channels
        )));
    }
    let mut data = image.data.clone();
    for (i, &h) in map.heatmap.iter().enumerate() {
        let a = OVERLAY_ALPHA * h;
        let c = jet(h);
        for k in 0..3 {
            let v = &mut data[i * 3 + k];
            *v = ((1.0 - a) * *v as f32 + a * c[k] as f32).round().clamp(0.0, 255.0) as u8;
        }
    }
    ImageU8::new(image.height, image.width, 3, data)
}

fn file_stem(s: &str) -> String {
    let base = Path::new(s).file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let clean: String = base.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if clean.is_empty() { "item".into() } else { clean }
}

/// Write overlays and scatter plots as PNG plus `index.json`; returns every
/// written path, index last.
pub fn render_outputs(
    maps: &[(SaliencyMap, ImageU8)],
    projections: &[(EmbeddingProjection, String)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = Vec::new();
    let mut paths = Vec::new();
    for (i, (map, image)) in maps.iter().enumerate() {
        let name = format!("gradcam_{i:04}_{}_c{}.png", file_stem(&map.record_ref), map.target_class);
        let path = out_dir.join(&name);
        overlay(image, map)?.save_png(&path)?;
        index.push(IndexEntry {
            artifact_type: "gradcam".into(),
            record_ref: Some(map.record_ref.clone()),
            target_class: Some(map.target_class),
            file: name,
        });
        paths.push(path);
    }
    for (i, (proj, title)) in projections.iter().enumerate() {
        let mut names: Vec<String> = Vec::new();
        let ids: Vec<usize> = proj
            .labels
            .iter()
            .map(|l| match names.iter().position(|n| n == l) {
                Some(k) => k,
                None => {
                    names.push(l.clone());
                    names.len() - 1
                }
            })
            .collect();
        let name = format!("tsne_{i:04}.png");
        let path = out_dir.join(&name);
        scatter(&proj.coords, &ids, &names, title).save_png(&path)?;
        index.push(IndexEntry {
            artifact_type: "tsne".into(),
            record_ref: None,
            target_class: None,
            file: name,
        });
        paths.push(path);
    }
    let idx_path = out_dir.join("index.json");
    write_atomic(&idx_path, (serde_json::to_string_pretty(&index)? + "\n").as_bytes())?;
    paths.push(idx_path);
    Ok(paths)
}
