//! Image standardization and training-time augmentation.
//!
//! Images are resized to the working resolution first (bilinear; masks use
//! nearest neighbor), then the augmentation list runs in order, then the
//! per-channel normalization `(x / 255 - mean) / std` is applied.

mod clahe;
mod image;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::clahe::clahe;
pub use self::image::{ImageU8, Mask};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Square working resolutions used for the upstream and downstream models.
pub const STANDARD_RESOLUTIONS: [u32; 3] = [256, 512, 1024];

/// Mean/std of the general-pretraining corpus, shared by every regime.
pub const DEFAULT_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const DEFAULT_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    HorizontalFlip { p: f32 },
    Grayscale { p: f32 },
    Blur { p: f32, kernel: usize },
    Clahe { p: f32, clip_limit: f32, tile_grid: usize },
}

impl Augmentation {
    pub fn probability(&self) -> f32 {
        match *self {
            Augmentation::HorizontalFlip { p }
            | Augmentation::Grayscale { p }
            | Augmentation::Blur { p, .. }
            | Augmentation::Clahe { p, .. } => p,
        }
    }

    /// The four training augmentations at probability 0.5.
    pub fn default_set() -> Vec<Augmentation> {
        vec![
            Augmentation::HorizontalFlip { p: 0.5 },
            Augmentation::Grayscale { p: 0.5 },
            Augmentation::Blur { p: 0.5, kernel: 5 },
            Augmentation::Clahe {
                p: 0.5,
                clip_limit: 2.0,
                tile_grid: 8,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resolution: u32,
    #[serde(default = "Augmentation::default_set")]
    pub augmentations: Vec<Augmentation>,
    #[serde(default = "default_mean")]
    pub mean: [f32; 3],
    #[serde(default = "default_std")]
    pub std: [f32; 3],
    #[serde(default)]
    pub train_mode: bool,
    /// Permit resolutions outside [`STANDARD_RESOLUTIONS`] (multiples of 32),
    /// for desk-scale runs.
    #[serde(default)]
    pub allow_custom_resolution: bool,
}

fn default_mean() -> [f32; 3] {
    DEFAULT_MEAN
}

fn default_std() -> [f32; 3] {
    DEFAULT_STD
}

impl PreprocessConfig {
    pub fn new(resolution: u32) -> Self {
        Self {
            resolution,
            augmentations: Augmentation::default_set(),
            mean: DEFAULT_MEAN,
            std: DEFAULT_STD,
            train_mode: false,
            allow_custom_resolution: !STANDARD_RESOLUTIONS.contains(&resolution),
        }
    }

    pub fn train(mut self) -> Self {
        self.train_mode = true;
        self
    }

    pub fn eval(mut self) -> Self {
        self.train_mode = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if self.allow_custom_resolution {
            if r < 32 || r % 32 != 0 {
                return Err(Error::Config(format!(
                    "custom resolution must be a multiple of 32 and >= 32, got {r}"
                )));
            }
        } else if !STANDARD_RESOLUTIONS.contains(&r) {
            return Err(Error::Config(format!(
                "resolution must be one of {STANDARD_RESOLUTIONS:?}, got {r}"
            )));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        for a in &self.augmentations {
            let p = a.probability();
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augmentation probability {p} outside [0, 1]")));
            }
            if let Augmentation::Blur { kernel, .. } = a {
                if kernel % 2 == 0 {
                    return Err(Error::Config("blur kernel must be odd".into()));
                }
            }
        }
        Ok(())
    }
}

/// Float working image, interleaved RGB in [0, 255].
struct Work {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

fn resize_bilinear(img: &ImageU8, out: usize) -> Work {
    let taps = |inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let s = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(inp - 1);
                (i0, (i0 + 1).min(inp - 1), s - i0 as f32)
            })
            .collect()
    };
    let ty = taps(img.height);
    let tx = taps(img.width);
    let mut data = vec![0.0f32; out * out * 3];
    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
            let (a, b, c, d) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
            for ch in 0..3 {
                let top = a[ch] as f32 * (1.0 - lx) + b[ch] as f32 * lx;
                let bot = c[ch] as f32 * (1.0 - lx) + d[ch] as f32 * lx;
                data[(oy * out + ox) * 3 + ch] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    Work { h: out, w: out, data }
}

fn flip_work(w: &mut Work) {
    for y in 0..w.h {
        let row = &mut w.data[y * w.w * 3..(y + 1) * w.w * 3];
        for x in 0..w.w / 2 {
            for ch in 0..3 {
                row.swap(x * 3 + ch, (w.w - 1 - x) * 3 + ch);
            }
        }
    }
}

fn grayscale(w: &mut Work) {
    for px in w.data.chunks_mut(3) {
        let y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        px.iter_mut().for_each(|v| *v = y);
    }
}

fn gaussian_blur(w: &mut Work, kernel: usize) {
    let r = kernel / 2;
    let sigma = 0.3 * ((kernel as f32 - 1.0) * 0.5 - 1.0) + 0.8;
    let mut k: Vec<f32> = (0..kernel)
        .map(|i| {
            let d = i as f32 - r as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let (h, wd) = (w.h, w.w);
    let mut tmp = vec![0.0f32; w.data.len()];
    for y in 0..h {
        for x in 0..wd {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let xx = reflect(x as isize + t as isize - r as isize, wd);
                    acc += kv * w.data[(y * wd + xx) * 3 + ch];
                }
                tmp[(y * wd + x) * 3 + ch] = acc;
            }
        }
    }
    for y in 0..h {
        for x in 0..wd {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let yy = reflect(y as isize + t as isize - r as isize, h);
                    acc += kv * tmp[(yy * wd + x) * 3 + ch];
                }
                w.data[(y * wd + x) * 3 + ch] = acc;
            }
        }
    }
}

/// CLAHE on BT.601 luma; chroma offsets are preserved.
fn clahe_work(w: &mut Work, clip_limit: f32, tiles: usize) {
    let luma: Vec<f32> = w
        .data
        .chunks(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    let plane: Vec<u8> = luma.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let eq = clahe(&plane, w.h, w.w, clip_limit, tiles);
    for ((px, &y), &ye) in w.data.chunks_mut(3).zip(&luma).zip(&eq) {
        let delta = ye as f32 - y;
        px.iter_mut().for_each(|v| *v = (*v + delta).clamp(0.0, 255.0));
    }
}

fn normalize(w: &Work, cfg: &PreprocessConfig) -> Tensor {
    let plane = w.h * w.w;
    let mut t = Tensor::zeros(1, 3, w.h, w.w);
    for (i, px) in w.data.chunks(3).enumerate() {
        for ch in 0..3 {
            t.data[ch * plane + i] = (px[ch] / 255.0 - cfg.mean[ch]) / cfg.std[ch];
        }
    }
    t
}

/// Inverse of the normalization step: back to [0, 255] intensities.
pub fn denormalize(t: &Tensor, cfg: &PreprocessConfig) -> Vec<f32> {
    let plane = t.plane();
    let mut out = vec![0.0f32; t.len()];
    for ch in 0..3 {
        for i in 0..plane {
            out[i * 3 + ch] = (t.data[ch * plane + i] * cfg.std[ch] + cfg.mean[ch]) * 255.0;
        }
    }
    out
}

fn check_image(image: &ImageU8) -> Result<()> {
    if image.channels != 3 {
        return Err(Error::Format(format!(
            "expected a 3-channel image, got {} channels",
            image.channels
        )));
    }
    if image.height < 32 || image.width < 32 {
        return Err(Error::Format(format!(
            "image {}x{} is smaller than 32x32",
            image.height, image.width
        )));
    }
    Ok(())
}

/// Standardize one image to a `[1, 3, R, R]` tensor. In eval mode (or when
/// `train_mode` is off) the result depends only on the input.
pub fn preprocess<R: Rng + ?Sized>(image: &ImageU8, cfg: &PreprocessConfig, rng: &mut R) -> Result<Tensor> {
    Ok(preprocess_inner(image, cfg, rng, None)?.0)
}

fn preprocess_inner<R: Rng + ?Sized>(
    image: &ImageU8,
    cfg: &PreprocessConfig,
    rng: &mut R,
    forced_flip: Option<bool>,
) -> Result<(Tensor, bool)> {
    check_image(image)?;
    let mut w = resize_bilinear(image, cfg.resolution as usize);
    let mut flipped = false;
    if cfg.train_mode {
        for aug in &cfg.augmentations {
            // one draw per augmentation keeps the stream aligned across runs
            let hit = rng.random::<f32>() < aug.probability();
            match *aug {
                Augmentation::HorizontalFlip { .. } => {
                    let f = forced_flip.unwrap_or(hit);
                    if f {
                        flip_work(&mut w);
                        flipped = !flipped;
                    }
                }
                Augmentation::Grayscale { .. } if hit => grayscale(&mut w),
                Augmentation::Blur { kernel, .. } if hit => gaussian_blur(&mut w, kernel),
                Augmentation::Clahe {
                    clip_limit,
                    tile_grid,
                    ..
                } if hit => clahe_work(&mut w, clip_limit, tile_grid),
                _ => {}
            }
        }
    }
    Ok((normalize(&w, cfg), flipped))
}

/// Nearest-neighbor resampling of a binary mask to `resolution²`.
pub fn preprocess_mask(mask: &Mask, resolution: u32) -> Result<Mask> {
    if mask.data.iter().any(|&v| v > 1) {
        return Err(Error::Validation("mask values must be 0 or 1".into()));
    }
    let r = resolution as usize;
    let idx = |o: usize, inp: usize| ((((o as f64) + 0.5) * inp as f64 / r as f64).floor() as usize).min(inp - 1);
    let mut data = vec![0u8; r * r];
    for oy in 0..r {
        let sy = idx(oy, mask.height);
        for ox in 0..r {
            data[oy * r + ox] = mask.data[sy * mask.width + idx(ox, mask.width)];
        }
    }
    Ok(Mask {
        height: r,
        width: r,
        data,
    })
}

fn flip_mask(m: &mut Mask) {
    for row in m.data.chunks_mut(m.width) {
        row.reverse();
    }
}

/// Image and mask together: geometric augmentations use one shared draw.
pub fn preprocess_pair<R: Rng + ?Sized>(
    image: &ImageU8,
    mask: &Mask,
    cfg: &PreprocessConfig,
    rng: &mut R,
) -> Result<(Tensor, Mask)> {
    if (image.height, image.width) != (mask.height, mask.width) {
        return Err(Error::Validation(format!(
            "image {}x{} and mask {}x{} differ",
            image.height, image.width, mask.height, mask.width
        )));
    }
    let (t, flipped) = preprocess_inner(image, cfg, rng, None)?;
    let mut m = preprocess_mask(mask, cfg.resolution)?;
    if flipped {
        flip_mask(&mut m);
    }
    Ok((t, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pattern(h: usize, w: usize) -> ImageU8 {
        let data = (0..h * w)
            .flat_map(|i| {
                let (y, x) = (i / w, i % w);
                [(x * 255 / w) as u8, (y * 255 / h) as u8, ((x * y) % 251) as u8]
            })
            .collect();
        ImageU8::new(h, w, 3, data).unwrap()
    }

    fn only(aug: Augmentation, res: u32) -> PreprocessConfig {
        let mut c = PreprocessConfig::new(res).train();
        c.augmentations = vec![aug];
        c
    }

    #[test]
    fn eval_is_deterministic_and_square() {
        let img = pattern(1536, 1536);
        let cfg = PreprocessConfig::new(512);
        assert!(cfg.validate().is_ok());
        let a = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!((a.c, a.h, a.w), (3, 512, 512));
        assert_eq!(a, b);
    }

    #[test]
    fn flip_mirrors_columns_and_is_involution() {
        let img = pattern(64, 64);
        let plain = preprocess(&img, &PreprocessConfig::new(64), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = only(Augmentation::HorizontalFlip { p: 1.0 }, 64);
        let f = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for c in 0..3 {
            for y in 0..64 {
                for x in 0..64 {
                    assert_eq!(f.at(0, c, y, x), plain.at(0, c, y, 63 - x));
                }
            }
        }
        let mut twice = PreprocessConfig::new(64).train();
        twice.augmentations = vec![
            Augmentation::HorizontalFlip { p: 1.0 },
            Augmentation::HorizontalFlip { p: 1.0 },
        ];
        let ff = preprocess(&img, &twice, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ff, plain);
    }

    #[test]
    fn clahe_keeps_uniform_image_uniform() {
        let img = ImageU8::filled(96, 96, [120, 60, 30]);
        let cfg = only(
            Augmentation::Clahe {
                p: 1.0,
                clip_limit: 2.0,
                tile_grid: 8,
            },
            64,
        );
        let t = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for c in 0..3 {
            let ch = t.channel(0, c);
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
            let std = (ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / ch.len() as f64).sqrt();
            assert!(std <= 1e-6, "channel {c} std {std}");
        }
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let img = pattern(64, 64);
        let mut cfg = only(Augmentation::Grayscale { p: 1.0 }, 64);
        cfg.mean = [0.5; 3];
        cfg.std = [0.25; 3];
        let t = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.channel(0, 0), t.channel(0, 1));
        assert_eq!(t.channel(0, 1), t.channel(0, 2));
    }

    #[test]
    fn blur_preserves_mean_of_constant() {
        let img = ImageU8::filled(64, 64, [200, 100, 50]);
        let cfg = only(Augmentation::Blur { p: 1.0, kernel: 5 }, 64);
        let plain = preprocess(&img, &PreprocessConfig::new(64), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in t.data.iter().zip(&plain.data) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn normalization_inverts() {
        let img = pattern(64, 64);
        let cfg = PreprocessConfig::new(64);
        let t = preprocess(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let back = denormalize(&t, &cfg);
        for (a, b) in back.iter().zip(&img.data) {
            assert!((a / 255.0 - *b as f32 / 255.0).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn rejects_non_rgb_and_bad_resolution() {
        let gray = ImageU8::new(64, 64, 1, vec![0; 64 * 64]).unwrap();
        assert!(matches!(
            preprocess(&gray, &PreprocessConfig::new(64), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Format(_))
        ));
        let mut cfg = PreprocessConfig::new(300);
        assert!(cfg.validate().is_err());
        cfg.allow_custom_resolution = false;
        cfg.resolution = 128;
        assert!(cfg.validate().is_err());
        cfg.resolution = 1024;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn masks_stay_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<u8> = (0..2048 * 2048).map(|_| rng.random_range(0..2)).collect();
        let m = Mask::new(2048, 2048, data).unwrap();
        let r = preprocess_mask(&m, 512).unwrap();
        assert_eq!(r.data.len(), 512 * 512);
        assert!(r.data.iter().all(|&v| v <= 1));
        let ones = Mask::new(100, 100, vec![1; 10_000]).unwrap();
        for res in [256, 512, 1024] {
            assert!(preprocess_mask(&ones, res).unwrap().data.iter().all(|&v| v == 1));
        }
    }

    #[test]
    fn paired_flip_moves_mask_with_image() {
        let img = pattern(64, 64);
        let mut mdata = vec![0u8; 64 * 64];
        for y in 0..64 {
            for x in 0..10 {
                mdata[y * 64 + x] = 1;
            }
        }
        let mask = Mask::new(64, 64, mdata).unwrap();
        let cfg = only(Augmentation::HorizontalFlip { p: 1.0 }, 64);
        let (_, m) = preprocess_pair(&img, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut expected = preprocess_mask(&mask, 64).unwrap();
        flip_mask(&mut expected);
        assert_eq!(m, expected);
        let small = Mask::new(32, 32, vec![0; 1024]).unwrap();
        assert!(matches!(
            preprocess_pair(&img, &small, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Validation(_))
        ));
    }
}
