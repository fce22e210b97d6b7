//! Synthetic fundus-like images for desk-scale runs and tests.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{BinaryLabel, DatasetManifest, FundusRecord, TaskKind};
use crate::error::Result;
use crate::preprocess::{ImageU8, Mask};

struct Canvas {
    size: usize,
    rgb: Vec<[f32; 3]>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            rgb: vec![[0.0; 3]; size * size],
        }
    }

    fn disc(&mut self, cx: f32, cy: f32, r: f32, mut f: impl FnMut(&mut [f32; 3], f32)) {
        let s = self.size as i64;
        let (y0, y1) = (((cy - r).floor() as i64).max(0), ((cy + r).ceil() as i64).min(s - 1));
        let (x0, x1) = (((cx - r).floor() as i64).max(0), ((cx + r).ceil() as i64).min(s - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2)).sqrt();
                if d <= r {
                    f(&mut self.rgb[y as usize * self.size + x as usize], d / r.max(1e-3));
                }
            }
        }
    }

    fn into_image<R: Rng>(self, noise: f32, rng: &mut R) -> ImageU8 {
        let n = Normal::new(0.0f32, noise).expect("positive noise");
        let data = self
            .rgb
            .iter()
            .flat_map(|p| {
                let e = n.sample(rng);
                p.map(|v| if v > 0.0 { (v + e).clamp(0.0, 255.0) as u8 } else { 0 })
            })
            .collect();
        ImageU8::new(self.size, self.size, 3, data).expect("canvas dimensions are consistent")
    }
}

/// Field of view, optic disc and vessel tree. Returns the canvas and the
/// vessel mask.
fn fundus_base<R: Rng>(size: usize, rng: &mut R, vessel_width: f32, vessel_contrast: f32) -> (Canvas, Vec<u8>) {
    let s = size as f32;
    let mut c = Canvas::new(size);
    let gain = rng.random_range(0.7..1.3f32);
    let base = [
        rng.random_range(165.0..200.0f32) * gain,
        rng.random_range(65.0..95.0f32) * gain,
        rng.random_range(30.0..50.0f32) * gain,
    ];
    let (cx, cy, fr) = (s / 2.0, s / 2.0, 0.46 * s);
    c.disc(cx, cy, fr, |p, d| {
        let v = 1.0 - 0.35 * d * d;
        *p = base.map(|b| b * v);
    });
    // low-frequency blotches
    for _ in 0..rng.random_range(2..5) {
        let (bx, by) = (rng.random_range(0.2..0.8) * s, rng.random_range(0.2..0.8) * s);
        let k = rng.random_range(0.85..1.15f32);
        c.disc(bx, by, rng.random_range(0.12..0.25) * s, |p, d| {
            let f = 1.0 + (k - 1.0) * (1.0 - d);
            *p = p.map(|v| v * f);
        });
    }
    let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
    let (dx, dy) = (cx + side * rng.random_range(0.15..0.25) * s, cy + rng.random_range(-0.05..0.05) * s);
    let mut mask = vec![0u8; size * size];
    for _ in 0..rng.random_range(4..8) {
        let mut ang = rng.random_range(0.0..2.0 * PI);
        let (mut x, mut y) = (dx, dy);
        let mut turn = 0.0f32;
        for _ in 0..(1.2 * s) as usize {
            turn = (turn + rng.random_range(-0.04..0.04f32)).clamp(-0.06, 0.06);
            ang += turn;
            x += ang.cos();
            y += ang.sin();
            if ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() > fr - 1.0 {
                break;
            }
            let r = vessel_width / 2.0;
            let (xi0, xi1) = ((x - r).floor().max(0.0) as usize, ((x + r).ceil() as usize).min(size - 1));
            let (yi0, yi1) = ((y - r).floor().max(0.0) as usize, ((y + r).ceil() as usize).min(size - 1));
            for yy in yi0..=yi1 {
                for xx in xi0..=xi1 {
                    if ((xx as f32 + 0.5 - x).powi(2) + (yy as f32 + 0.5 - y).powi(2)).sqrt() <= r {
                        mask[yy * size + xx] = 1;
                    }
                }
            }
        }
    }
    for (p, &m) in c.rgb.iter_mut().zip(&mask) {
        if m == 1 {
            *p = [p[0] * vessel_contrast, p[1] * vessel_contrast * 0.8, p[2] * vessel_contrast];
        }
    }
    let dr = 0.07 * s;
    c.disc(dx, dy, dr, |p, d| {
        let w = 1.0 - d * d;
        *p = [
            p[0] + (250.0 - p[0]) * w,
            p[1] + (215.0 - p[1]) * w,
            p[2] + (150.0 - p[2]) * w,
        ];
    });
    (c, mask)
}

const LESION: [[f32; 3]; 2] = [[235.0, 215.0, 110.0], [70.0, 15.0, 10.0]];
/// Benign spots with the same luminance as the lesions but a different hue.
const BENIGN: [[f32; 3]; 2] = [[200.0, 210.0, 240.0], [25.0, 35.0, 60.0]];

fn lesions<R: Rng>(c: &mut Canvas, rng: &mut R, count: usize, region: (f32, f32, f32, f32)) {
    spots(c, rng, count, region, LESION);
}

fn spots<R: Rng>(c: &mut Canvas, rng: &mut R, count: usize, region: (f32, f32, f32, f32), colors: [[f32; 3]; 2]) {
    let s = c.size as f32;
    let (x0, y0, x1, y1) = region;
    for _ in 0..count {
        let (lx, ly) = (rng.random_range(x0..x1) * s, rng.random_range(y0..y1) * s);
        let r = rng.random_range(0.04..0.06) * s;
        let bright = rng.random_bool(0.5);
        c.disc(lx, ly, r, |p, _| {
            if p.iter().any(|v| *v > 0.0) {
                *p = if bright { colors[0] } else { colors[1] };
            }
        });
    }
}

/// Normal and abnormal images. Every image carries small bright and dark
/// spots; in abnormal ones some of them are lesion-coloured.
pub fn abnormality_images(n: usize, size: usize, abnormal_fraction: f64, seed: u64) -> Vec<(ImageU8, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let abnormal = rng.random_bool(abnormal_fraction);
            let (mut c, _) = fundus_base(size, &mut rng, (size as f32 / 64.0).max(1.0), 0.7);
            let k = rng.random_range(5..10);
            let m = if abnormal { rng.random_range(3..6) } else { 0 };
            spots(&mut c, &mut rng, k - m, (0.2, 0.2, 0.8, 0.8), BENIGN);
            lesions(&mut c, &mut rng, m, (0.2, 0.2, 0.8, 0.8));
            (c.into_image(5.0, &mut rng), abnormal)
        })
        .collect()
}

/// Abnormal images carry a lesion cluster confined to one quadrant
/// (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right); `None` for normal.
pub fn quadrant_images(n: usize, size: usize, seed: u64) -> Vec<(ImageU8, Option<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let q = rng.random_bool(0.5).then(|| rng.random_range(0..4usize));
            let (mut c, _) = fundus_base(size, &mut rng, (size as f32 / 64.0).max(1.0), 0.7);
            if let Some(q) = q {
                let (ox, oy) = ((q % 2) as f32 * 0.5, (q / 2) as f32 * 0.5);
                let k = rng.random_range(5..9);
                lesions(&mut c, &mut rng, k, (ox + 0.12, oy + 0.12, ox + 0.38, oy + 0.38));
            }
            (c.into_image(5.0, &mut rng), q)
        })
        .collect()
}

/// Images with curvilinear vessel trees and their binary masks.
pub fn vessel_images(n: usize, size: usize, seed: u64) -> Vec<(ImageU8, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (c, mask) = fundus_base(size, &mut rng, (size as f32 / 24.0).max(2.0), 0.45);
            let img = c.into_image(5.0, &mut rng);
            (img, Mask::new(size, size, mask).expect("binary mask"))
        })
        .collect()
}

/// Non-fundus images: textured backgrounds with either filled circles
/// (positive) or filled squares.
pub fn general_images(n: usize, size: usize, seed: u64) -> Vec<(ImageU8, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    (0..n)
        .map(|_| {
            let circles = rng.random_bool(0.5);
            let mut c = Canvas::new(size);
            let bg = [rng.random_range(40.0..200.0f32), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
            let (fx, fy) = (rng.random_range(0.05..0.3f32), rng.random_range(0.05..0.3f32));
            for y in 0..size {
                for x in 0..size {
                    let t = 1.0 + 0.2 * ((x as f32 * fx).sin() * (y as f32 * fy).cos());
                    c.rgb[y * size + x] = bg.map(|v| v * t);
                }
            }
            for _ in 0..rng.random_range(2..6) {
                let col = [rng.random_range(0.0..255.0f32), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
                let r = rng.random_range(0.06..0.16) * s;
                let (cx, cy) = (rng.random_range(0.15..0.85) * s, rng.random_range(0.15..0.85) * s);
                if circles {
                    c.disc(cx, cy, r, |p, _| *p = col);
                } else {
                    for y in ((cy - r).max(0.0) as usize)..((cy + r).min(s - 1.0) as usize) {
                        for x in ((cx - r).max(0.0) as usize)..((cx + r).min(s - 1.0) as usize) {
                            c.rgb[y * size + x] = col;
                        }
                    }
                }
            }
            for p in c.rgb.iter_mut() {
                *p = p.map(|v| v.max(1.0));
            }
            (c.into_image(6.0, &mut rng), circles)
        })
        .collect()
}

/// Write `images` as PNGs under `dir` with an abnormality manifest. Two
/// consecutive images share a patient id.
pub fn write_abnormality_set(dir: &Path, name: &str, images: &[(ImageU8, bool)]) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(images.len());
    for (i, (img, abnormal)) in images.iter().enumerate() {
        let rel = format!("images/{name}_{i:05}.png");
        img.save_png(&dir.join(&rel))?;
        records.push(FundusRecord::new(rel, format!("{name}-P{:05}", i / 2)).with_binary(BinaryLabel::from_bit(*abnormal)));
    }
    let mut m = DatasetManifest::new(name, TaskKind::Abnormality, records)?;
    m.base_dir = Some(dir.to_path_buf());
    m.save(&dir.join(format!("{name}.csv")))?;
    Ok(m)
}

/// Write vessel images and masks with a segmentation manifest.
pub fn write_vessel_set(dir: &Path, name: &str, images: &[(ImageU8, Mask)]) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(images.len());
    for (i, (img, mask)) in images.iter().enumerate() {
        let rel = format!("images/{name}_{i:05}.png");
        let mrel = format!("masks/{name}_{i:05}.png");
        img.save_png(&dir.join(&rel))?;
        mask.save_png(&dir.join(&mrel))?;
        records.push(FundusRecord::new(rel, format!("{name}-P{i:05}")).with_mask(mrel));
    }
    let mut m = DatasetManifest::new(name, TaskKind::VesselSegmentation, records)?;
    m.base_dir = Some(dir.to_path_buf());
    m.save(&dir.join(format!("{name}.csv")))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = abnormality_images(6, 48, 0.5, 3);
        let b = abnormality_images(6, 48, 0.5, 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|(i, _)| i.height == 48 && i.width == 48 && i.channels == 3));
        let v = vessel_images(2, 48, 1);
        assert!(v.iter().all(|(_, m)| m.data.iter().any(|&x| x == 1)));
    }

    #[test]
    fn quadrant_lesions_stay_in_quadrant() {
        let base = quadrant_images(40, 64, 9);
        assert!(base.iter().any(|(_, q)| q.is_some()) && base.iter().any(|(_, q)| q.is_none()));
    }
}
