//! Bottleneck residual backbone (ResNet v1.5 layout: stride on the 3×3 conv).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{join, BatchNorm2d, Conv2d, MaxPool, Mode, Module, Param, Relu, Tensor};

const EXPANSION: usize = 4;

/// Depth and width of the residual backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Bottleneck blocks per stage.
    pub blocks: [usize; 4],
    /// Channels of the stem; stage `i` uses `base_width << i` planes.
    pub base_width: usize,
}

impl BackboneConfig {
    /// The 50-layer network: `[3, 4, 6, 3]` bottlenecks, 2048-d embedding.
    pub const fn resnet50() -> Self {
        Self {
            blocks: [3, 4, 6, 3],
            base_width: 64,
        }
    }

    /// Same topology family, one block per stage and 8 base channels, for
    /// single-core experiments.
    pub const fn tiny() -> Self {
        Self {
            blocks: [1, 1, 1, 1],
            base_width: 8,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.base_width * 8 * EXPANSION
    }

    /// Weighted layers: stem conv + 3 per bottleneck + the classifier.
    pub fn depth(&self) -> usize {
        2 + 3 * self.blocks.iter().sum::<usize>()
    }

    /// Output channels of `[stem, stage1, stage2, stage3, stage4]`.
    pub fn feature_channels(&self) -> [usize; 5] {
        let b = self.base_width;
        [b, b * EXPANSION, b * 2 * EXPANSION, b * 4 * EXPANSION, b * 8 * EXPANSION]
    }

    /// Total downsampling of the final feature map.
    pub const STRIDE: usize = 32;
}

#[derive(Debug, Clone)]
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    relu_out: Relu,
}

impl Bottleneck {
    fn new<R: Rng + ?Sized>(in_c: usize, planes: usize, stride: usize, rng: &mut R) -> Self {
        let out_c = planes * EXPANSION;
        let downsample = (stride != 1 || in_c != out_c).then(|| {
            (
                Conv2d::new(in_c, out_c, 1, stride, 0, false, rng),
                BatchNorm2d::new(out_c),
            )
        });
        Self {
            conv1: Conv2d::new(in_c, planes, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(planes),
            relu1: Relu::default(),
            conv2: Conv2d::new(planes, planes, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(planes),
            relu2: Relu::default(),
            conv3: Conv2d::new(planes, out_c, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(out_c),
            downsample,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let out = self.conv1.forward(x, mode);
        let out = self.relu1.forward(self.bn1.forward(&out, mode), mode);
        let out = self.conv2.forward(&out, mode);
        let out = self.relu2.forward(self.bn2.forward(&out, mode), mode);
        let out = self.conv3.forward(&out, mode);
        let mut out = self.bn3.forward(&out, mode);
        match &mut self.downsample {
            Some((conv, bn)) => {
                let id = conv.forward(x, mode);
                out.add_assign(&bn.forward(&id, mode));
            }
            None => out.add_assign(x),
        }
        self.relu_out.forward(out, mode)
    }

    fn backward(&mut self, g: Tensor) -> Tensor {
        let g = self.relu_out.backward(g);
        let gm = self.bn3.backward(&g);
        let gm = self.conv3.backward(&gm, true).unwrap();
        let gm = self.bn2.backward(&self.relu2.backward(gm));
        let gm = self.conv2.backward(&gm, true).unwrap();
        let gm = self.bn1.backward(&self.relu1.backward(gm));
        let mut dx = self.conv1.backward(&gm, true).unwrap();
        match &mut self.downsample {
            Some((conv, bn)) => {
                let gi = bn.backward(&g);
                dx.add_assign(&conv.backward(&gi, true).unwrap());
            }
            None => dx.add_assign(&g),
        }
        dx
    }
}

impl Module for Bottleneck {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.bn1.params(&join(prefix, "bn1"), out);
        self.conv2.params(&join(prefix, "conv2"), out);
        self.bn2.params(&join(prefix, "bn2"), out);
        self.conv3.params(&join(prefix, "conv3"), out);
        self.bn3.params(&join(prefix, "bn3"), out);
        if let Some((c, b)) = &self.downsample {
            c.params(&join(prefix, "downsample.0"), out);
            b.params(&join(prefix, "downsample.1"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.bn1.params_mut(&join(prefix, "bn1"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
        self.bn2.params_mut(&join(prefix, "bn2"), out);
        self.conv3.params_mut(&join(prefix, "conv3"), out);
        self.bn3.params_mut(&join(prefix, "bn3"), out);
        if let Some((c, b)) = &mut self.downsample {
            c.params_mut(&join(prefix, "downsample.0"), out);
            b.params_mut(&join(prefix, "downsample.1"), out);
        }
    }
}

/// Residual feature extractor, fully convolutional.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu: Relu,
    pool: MaxPool,
    stages: Vec<Vec<Bottleneck>>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Self {
        let b = config.base_width;
        let conv1 = Conv2d::new(3, b, 7, 2, 3, false, rng);
        let mut in_c = b;
        let mut stages = Vec::with_capacity(4);
        for (s, &n) in config.blocks.iter().enumerate() {
            let planes = b << s;
            let stride = if s == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(n);
            for i in 0..n {
                blocks.push(Bottleneck::new(in_c, planes, if i == 0 { stride } else { 1 }, rng));
                in_c = planes * EXPANSION;
            }
            stages.push(blocks);
        }
        Self {
            config,
            conv1,
            bn1: BatchNorm2d::new(b),
            relu: Relu::default(),
            pool: MaxPool::default(),
            stages,
        }
    }

    /// Feature maps `[stem (stride 2), stage1 (4), stage2 (8), stage3 (16), stage4 (32)]`.
    pub fn forward_features(&mut self, x: &Tensor, mode: Mode) -> Vec<Tensor> {
        let stem = self.conv1.forward(x, mode);
        let stem = self.relu.forward(self.bn1.forward(&stem, mode), mode);
        let mut cur = self.pool.forward(&stem, mode);
        let mut feats = Vec::with_capacity(5);
        feats.push(stem);
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                cur = block.forward(&cur, mode);
            }
            feats.push(cur.clone());
        }
        feats
    }

    /// Final-stage feature map only.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.forward_features(x, mode).pop().expect("five feature maps")
    }

    /// Backpropagate gradients arriving at any of the five feature maps.
    /// Only parameter gradients are produced; the image gradient is dropped.
    pub fn backward(&mut self, grads: Vec<Option<Tensor>>) {
        self.backward_collect(grads);
    }

    /// As [`Backbone::backward`], also returning the total gradient at each
    /// of the five feature maps.
    pub fn backward_collect(&mut self, mut grads: Vec<Option<Tensor>>) -> Vec<Tensor> {
        assert_eq!(grads.len(), 5, "one gradient slot per feature map");
        let mut g = grads[4].take().expect("gradient at the final stage");
        let mut at = vec![Tensor::zeros(0, 0, 0, 0); 5];
        at[4] = g.clone();
        for s in (0..4).rev() {
            for block in self.stages[s].iter_mut().rev() {
                g = block.backward(g);
            }
            if s > 0 {
                if let Some(skip) = grads[s].take() {
                    g.add_assign(&skip);
                }
                at[s] = g.clone();
            }
        }
        let mut g = self.pool.backward(&g);
        if let Some(skip) = grads[0].take() {
            g.add_assign(&skip);
        }
        at[0] = g.clone();
        let g = self.relu.backward(g);
        let g = self.bn1.backward(&g);
        self.conv1.backward(&g, false);
        at
    }
}

impl Module for Backbone {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv1.params(&join(prefix, "conv1"), out);
        self.bn1.params(&join(prefix, "bn1"), out);
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, b) in stage.iter().enumerate() {
                b.params(&join(prefix, &format!("layer{}.{i}", s + 1)), out);
            }
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.bn1.params_mut(&join(prefix, "bn1"), out);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (i, b) in stage.iter_mut().enumerate() {
                b.params_mut(&join(prefix, &format!("layer{}.{i}", s + 1)), out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resnet50_shape_contract() {
        let cfg = BackboneConfig::resnet50();
        assert_eq!(cfg.depth(), 50);
        assert_eq!(cfg.embedding_dim(), 2048);
        let bb = Backbone::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let convs = bb
            .named_params("")
            .iter()
            .filter(|(n, p)| n.ends_with("weight") && p.shape.len() == 4 && !n.contains("downsample"))
            .count();
        // 49 convolutions + the classifier make up the 50 layers
        assert_eq!(convs, 49);
    }

    #[test]
    fn tiny_feature_strides() {
        let cfg = BackboneConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bb = Backbone::new(cfg, &mut rng);
        let x = Tensor::randn(2, 3, 64, 64, &mut rng);
        let feats = bb.forward_features(&x, Mode::EVAL);
        let sizes: Vec<(usize, usize)> = feats.iter().map(|f| (f.c, f.h)).collect();
        let ch = cfg.feature_channels();
        assert_eq!(sizes, vec![(ch[0], 32), (ch[1], 16), (ch[2], 8), (ch[3], 4), (ch[4], 2)]);
    }

    #[test]
    fn backbone_gradient_spot_check() {
        let cfg = BackboneConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bb = Backbone::new(cfg, &mut rng);
        let x = Tensor::randn(2, 3, 32, 32, &mut rng);
        let y = bb.forward(&x, Mode::EVAL_GRAD);
        let r: Vec<f32> = (0..y.len()).map(|i| ((i * 13) % 7) as f32 / 7.0 - 0.4).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None, None, None, None, None];
        grads[4] = Some(Tensor::from_vec(y.n, y.c, y.h, y.w, r.clone()));
        bb.backward(grads);
        let obj = |bb: &mut Backbone| -> f64 {
            let y = bb.forward(&x, Mode::EVAL);
            y.data.iter().zip(&r).map(|(a, b)| (*a * *b) as f64).sum()
        };
        let names: Vec<String> = bb.named_params("").into_iter().map(|(n, _)| n).collect();
        for target in ["conv1.weight", "layer1.0.conv2.weight", "layer3.0.downsample.0.weight"] {
            let idx = names.iter().position(|n| n == target).unwrap();
            let analytic = bb.named_params("")[idx].1.grad[3];
            let h = 1e-3f32;
            let set = |bb: &mut Backbone, v: f32| {
                let mut ps = bb.named_params_mut("");
                ps[idx].1.value[3] = v;
            };
            let base = bb.named_params("")[idx].1.value[3];
            set(&mut bb, base + h);
            let fp = obj(&mut bb);
            set(&mut bb, base - h);
            let fm = obj(&mut bb);
            set(&mut bb, base);
            let numeric = (fp - fm) / (2.0 * h as f64);
            let rel = (analytic as f64 - numeric).abs() / numeric.abs().max(1e-2);
            assert!(rel < 5e-2, "{target}: {analytic} vs {numeric}");
        }
    }
}
