use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    join, upsample_bilinear, upsample_bilinear_backward, BatchNorm2d, Conv2d, Linear, Mode, Module,
    Param, Relu, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Two logits (normal, abnormal).
    LinearBinary,
    /// Eight logits, one per disease category.
    LinearMultilabel,
    /// One-channel logit map at input resolution.
    Decoder,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::LinearBinary => 2,
            HeadKind::LinearMultilabel => 8,
            HeadKind::Decoder => 1,
        }
    }
}

/// Classifier over pooled embeddings: one linear layer, or the optional
/// two-layer perceptron variant.
#[derive(Debug, Clone)]
pub enum ClassifierHead {
    Linear(Linear),
    Mlp {
        fc1: Linear,
        relu: Relu,
        fc2: Linear,
    },
}

impl ClassifierHead {
    pub fn linear<R: Rng + ?Sized>(in_f: usize, out_f: usize, rng: &mut R) -> Self {
        ClassifierHead::Linear(Linear::new(in_f, out_f, rng))
    }

    pub fn mlp<R: Rng + ?Sized>(in_f: usize, out_f: usize, rng: &mut R) -> Self {
        let hidden = (in_f / 2).max(16);
        ClassifierHead::Mlp {
            fc1: Linear::new(in_f, hidden, rng),
            relu: Relu::default(),
            fc2: Linear::new(hidden, out_f, rng),
        }
    }

    pub fn in_features(&self) -> usize {
        match self {
            ClassifierHead::Linear(l) => l.in_f,
            ClassifierHead::Mlp { fc1, .. } => fc1.in_f,
        }
    }

    pub fn out_features(&self) -> usize {
        match self {
            ClassifierHead::Linear(l) => l.out_f,
            ClassifierHead::Mlp { fc2, .. } => fc2.out_f,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        match self {
            ClassifierHead::Linear(l) => l.forward(x, mode),
            ClassifierHead::Mlp { fc1, relu, fc2 } => {
                let h = relu.forward(fc1.forward(x, mode), mode);
                fc2.forward(&h, mode)
            }
        }
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        match self {
            ClassifierHead::Linear(l) => l.backward(g),
            ClassifierHead::Mlp { fc1, relu, fc2 } => {
                let gh = relu.backward(fc2.backward(g));
                fc1.backward(&gh)
            }
        }
    }
}

impl Module for ClassifierHead {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        match self {
            ClassifierHead::Linear(l) => l.params(&join(prefix, "fc"), out),
            ClassifierHead::Mlp { fc1, fc2, .. } => {
                fc1.params(&join(prefix, "fc1"), out);
                fc2.params(&join(prefix, "fc2"), out);
            }
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        match self {
            ClassifierHead::Linear(l) => l.params_mut(&join(prefix, "fc"), out),
            ClassifierHead::Mlp { fc1, fc2, .. } => {
                fc1.params_mut(&join(prefix, "fc1"), out);
                fc2.params_mut(&join(prefix, "fc2"), out);
            }
        }
    }
}

/// Upsample ×2 to the skip's size, concatenate the skip, conv-BN-ReLU.
#[derive(Debug, Clone)]
struct UpBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: Relu,
    in_c: usize,
    in_hw: (usize, usize),
}

impl UpBlock {
    fn new<R: Rng + ?Sized>(in_c: usize, skip_c: usize, out_c: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(in_c + skip_c, out_c, 3, 1, 1, false, rng),
            bn: BatchNorm2d::new(out_c),
            relu: Relu::default(),
            in_c,
            in_hw: (0, 0),
        }
    }

    fn forward(&mut self, x: &Tensor, skip: &Tensor, mode: Mode) -> Tensor {
        self.in_hw = (x.h, x.w);
        let up = upsample_bilinear(x, skip.h, skip.w);
        let cat = Tensor::concat_channels(&up, skip);
        let y = self.conv.forward(&cat, mode);
        self.relu.forward(self.bn.forward(&y, mode), mode)
    }

    /// Returns (gradient wrt `x`, gradient wrt `skip`).
    fn backward(&mut self, g: Tensor) -> (Tensor, Tensor) {
        let g = self.bn.backward(&self.relu.backward(g));
        let gcat = self.conv.backward(&g, true).unwrap();
        let (gup, gskip) = gcat.split_channels(self.in_c);
        (upsample_bilinear_backward(&gup, self.in_hw.0, self.in_hw.1), gskip)
    }
}

impl Module for UpBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv.params(&join(prefix, "conv"), out);
        self.bn.params(&join(prefix, "bn"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.params_mut(&join(prefix, "conv"), out);
        self.bn.params_mut(&join(prefix, "bn"), out);
    }
}

/// U-Net style decoder over the residual encoder.
///
/// Skips come from stage3, stage2, stage1 and the stride-2 stem; a last
/// block restores input resolution with the image itself as the skip. Each
/// block halves the width of the skip it consumes.
#[derive(Debug, Clone)]
pub struct Decoder {
    blocks: Vec<UpBlock>,
    out_conv: Conv2d,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(feature_channels: [usize; 5], rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(5);
        let mut cur = feature_channels[4];
        for &skip_c in feature_channels[..4].iter().rev() {
            let out = (skip_c / 2).max(8);
            blocks.push(UpBlock::new(cur, skip_c, out, rng));
            cur = out;
        }
        blocks.push(UpBlock::new(cur, 3, cur, rng));
        Self {
            blocks,
            out_conv: Conv2d::new(cur, 1, 1, 1, 0, true, rng),
        }
    }

    /// `feats` are the five encoder maps; `image` is the network input.
    pub fn forward(&mut self, image: &Tensor, feats: &[Tensor], mode: Mode) -> Tensor {
        let mut x = self.blocks[0].forward(&feats[4], &feats[3], mode);
        for (i, skip) in [&feats[2], &feats[1], &feats[0]].into_iter().enumerate() {
            x = self.blocks[i + 1].forward(&x, skip, mode);
        }
        let x = self.blocks[4].forward(&x, image, mode);
        self.out_conv.forward(&x, mode)
    }

    /// Gradients for the five encoder maps.
    pub fn backward(&mut self, g: &Tensor) -> Vec<Option<Tensor>> {
        let g = self.out_conv.backward(g, true).unwrap();
        let (mut g, _gimage) = self.blocks[4].backward(g);
        let mut grads: Vec<Option<Tensor>> = vec![None, None, None, None, None];
        // block 3 consumed the stem, block 2 stage1, block 1 stage2
        for (block, feat) in [(3usize, 0usize), (2, 1), (1, 2)] {
            let (gx, gskip) = self.blocks[block].backward(g);
            grads[feat] = Some(gskip);
            g = gx;
        }
        let (g4, g3) = self.blocks[0].backward(g);
        grads[3] = Some(g3);
        grads[4] = Some(g4);
        grads
    }
}

impl Module for Decoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("up{i}")), out);
        }
        self.out_conv.params(&join(prefix, "out"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("up{i}")), out);
        }
        self.out_conv.params_mut(&join(prefix, "out"), out);
    }
}
