use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::nn::{global_avg_pool, global_avg_pool_backward, upsample_bilinear, Mode, Module, Tensor};

/// Heatmap aligned with the input image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in [0, 1].
    pub heatmap: Vec<f32>,
    /// Map at feature resolution before upsampling (after ReLU, unnormalized).
    pub raw: Vec<f32>,
    pub raw_hw: (usize, usize),
    pub target_class: usize,
    pub source_layer: String,
    pub record_ref: String,
    /// Every gradient-weighted activation was ≤ 0; heatmap is all zero.
    pub degenerate: bool,
}

impl SaliencyMap {
    /// Share of total heatmap mass inside the rectangle `[y0, y1) × [x0, x1)`.
    pub fn mass_fraction(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
        let total: f64 = self.heatmap.iter().map(|&v| v as f64).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut inside = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                inside += self.heatmap[y * self.width + x] as f64;
            }
        }
        inside / total
    }
}

/// Feature map used as the Grad-CAM source: 0 is the stem, 1–4 the
/// residual stages.
pub fn layer_name(stage: usize) -> String {
    if stage == 0 {
        "backbone.stem".into()
    } else {
        format!("backbone.layer{stage}")
    }
}

/// Grad-CAM on the raw target logit for a single `[1, 3, R, R]` image.
/// `stage` defaults to the last residual stage.
pub fn grad_cam(
    bundle: &mut ModelBundle,
    image: &Tensor,
    target_class: usize,
    stage: Option<usize>,
    record_ref: &str,
) -> Result<SaliencyMap> {
    if image.n != 1 {
        return Err(Error::Validation(format!("Grad-CAM takes one image, got {}", image.n)));
    }
    let outputs = bundle.head_kind.outputs();
    if bundle.classifier_mut().is_none() {
        return Err(Error::Config("Grad-CAM needs a classification head".into()));
    }
    if target_class >= outputs {
        return Err(Error::Config(format!("target class {target_class} out of range for {outputs} outputs")));
    }
    let stage = stage.unwrap_or(4);
    if stage > 4 {
        return Err(Error::Config(format!("source stage {stage} does not exist")));
    }
    bundle.zero_grad();
    let feats = bundle.backbone.forward_features(image, Mode::EVAL_GRAD);
    let last = &feats[4];
    let (fh, fw) = (last.h, last.w);
    let head = bundle.classifier_mut().expect("checked above");
    let logits = head.forward(&global_avg_pool(last), Mode::EVAL_GRAD);
    let mut g = Tensor::zeros(logits.n, logits.c, logits.h, logits.w);
    g.data[target_class] = 1.0;
    let g_emb = head.backward(&g);
    let g_last = global_avg_pool_backward(&g_emb, fh, fw);
    let grad = if stage == 4 {
        g_last
    } else {
        let slots = vec![None, None, None, None, Some(g_last)];
        bundle.backbone.backward_collect(slots).swap_remove(stage)
    };
    bundle.zero_grad();
    let a = &feats[stage];
    let plane = a.plane();
    let mut cam = vec![0.0f32; plane];
    for k in 0..a.c {
        let w = grad.channel(0, k).iter().sum::<f32>() / plane as f32;
        for (c, v) in cam.iter_mut().zip(a.channel(0, k)) {
            *c += w * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let raw = cam.clone();
    let up = upsample_bilinear(&Tensor::from_vec(1, 1, a.h, a.w, cam), image.h, image.w);
    let (lo, hi) = up.data.iter().fold((f32::MAX, f32::MIN), |m, &v| (m.0.min(v), m.1.max(v)));
    let degenerate = !(hi > 0.0) || hi - lo <= 0.0;
    let heatmap = if degenerate {
        vec![0.0; up.data.len()]
    } else {
        up.data.iter().map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    };
    Ok(SaliencyMap {
        height: image.h,
        width: image.w,
        heatmap,
        raw,
        raw_hw: (a.h, a.w),
        target_class,
        source_layer: layer_name(stage),
        record_ref: record_ref.to_string(),
        degenerate,
    })
}
