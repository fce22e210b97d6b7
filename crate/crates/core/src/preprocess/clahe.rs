//! Contrast-limited adaptive histogram equalization on an 8-bit plane.

/// Equalize `plane` (row-major, `h × w`) with a `tiles × tiles` grid.
///
/// Each tile's histogram is clipped at `clip_limit × (tile pixels / 256)`;
/// the excess is spread evenly over all bins. Pixels map through the
/// bilinear blend of the four nearest tile lookup tables.
pub fn clahe(plane: &[u8], h: usize, w: usize, clip_limit: f32, tiles: usize) -> Vec<u8> {
    assert_eq!(plane.len(), h * w);
    let tiles = tiles.max(1).min(h).min(w);
    let bounds = |len: usize| -> Vec<(usize, usize)> {
        (0..tiles)
            .map(|t| (t * len / tiles, (t + 1) * len / tiles))
            .collect()
    };
    let rows = bounds(h);
    let cols = bounds(w);

    let mut luts = vec![[0u8; 256]; tiles * tiles];
    for (ty, &(y0, y1)) in rows.iter().enumerate() {
        for (tx, &(x0, x1)) in cols.iter().enumerate() {
            let mut hist = [0u32; 256];
            for y in y0..y1 {
                for &v in &plane[y * w + x0..y * w + x1] {
                    hist[v as usize] += 1;
                }
            }
            let area = ((y1 - y0) * (x1 - x0)) as u32;
            luts[ty * tiles + tx] = tile_lut(&mut hist, area, clip_limit);
        }
    }

    // tile centers for interpolation
    let centers = |b: &[(usize, usize)]| -> Vec<f32> {
        b.iter().map(|&(a, e)| (a + e) as f32 / 2.0 - 0.5).collect()
    };
    let cy = centers(&rows);
    let cx = centers(&cols);
    let locate = |c: &[f32], p: f32| -> (usize, usize, f32) {
        if p <= c[0] {
            return (0, 0, 0.0);
        }
        let last = c.len() - 1;
        if p >= c[last] {
            return (last, last, 0.0);
        }
        let i = c.iter().rposition(|&v| v <= p).unwrap();
        (i, i + 1, (p - c[i]) / (c[i + 1] - c[i]))
    };

    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let (ty0, ty1, fy) = locate(&cy, y as f32);
        for x in 0..w {
            let (tx0, tx1, fx) = locate(&cx, x as f32);
            let v = plane[y * w + x] as usize;
            let l = |ty: usize, tx: usize| luts[ty * tiles + tx][v] as f32;
            let top = l(ty0, tx0) * (1.0 - fx) + l(ty0, tx1) * fx;
            let bot = l(ty1, tx0) * (1.0 - fx) + l(ty1, tx1) * fx;
            out[y * w + x] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

fn tile_lut(hist: &mut [u32; 256], area: u32, clip_limit: f32) -> [u8; 256] {
    let mut lut = [0u8; 256];
    if area == 0 {
        return lut;
    }
    // fractional redistribution keeps the mapping independent of tile area
    let mut h: Vec<f64> = hist.iter().map(|&b| b as f64).collect();
    if clip_limit > 0.0 {
        let limit = (clip_limit as f64 * area as f64 / 256.0).max(1.0);
        let mut excess = 0.0;
        for b in h.iter_mut() {
            if *b > limit {
                excess += *b - limit;
                *b = limit;
            }
        }
        let per_bin = excess / 256.0;
        h.iter_mut().for_each(|b| *b += per_bin);
    }
    let scale = 255.0 / area as f64;
    let mut cdf = 0.0;
    for (i, &b) in h.iter().enumerate() {
        cdf += b;
        lut[i] = (cdf * scale).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_stays_constant() {
        // equal tiles: exactly constant
        let out = clahe(&vec![90u8; 64 * 64], 64, 64, 2.0, 8);
        assert!(out.iter().all(|&v| v == out[0]));
        // unequal tile areas round differently by at most one level
        let out = clahe(&vec![90u8; 40 * 52], 40, 52, 2.0, 8);
        let (lo, hi) = (out.iter().min().unwrap(), out.iter().max().unwrap());
        assert!(hi - lo <= 1, "{lo}..{hi}");
    }

    #[test]
    fn stretches_low_contrast() {
        let (h, w) = (64, 64);
        let plane: Vec<u8> = (0..h * w).map(|i| 100 + ((i % w) * 20 / w) as u8).collect();
        let out = clahe(&plane, h, w, 2.0, 4);
        let range = |p: &[u8]| *p.iter().max().unwrap() as i32 - *p.iter().min().unwrap() as i32;
        assert!(range(&out) > range(&plane));
    }
}
