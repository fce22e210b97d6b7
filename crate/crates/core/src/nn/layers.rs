//! Layers with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs only when the forward
//! pass runs with `Mode::record` set.

use rand::Rng;

use super::param::{join, Module, Param};
use super::tensor::{sgemm, Tensor};
use crate::par;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Batch-norm uses batch statistics and updates running statistics.
    pub train: bool,
    /// Cache activations for a backward pass.
    pub record: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode { train: true, record: true };
    pub const EVAL: Mode = Mode { train: false, record: false };
    /// Frozen statistics but gradients available (Grad-CAM, frozen encoders).
    pub const EVAL_GRAD: Mode = Mode { train: false, record: true };
}

/// Samples per gradient-accumulation chunk. Fixed so that the reduction order
/// does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor>,
}

impl Conv2d {
    /// Kaiming fan-in normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_c * k * k) as f32;
        let weight = Param::normal(vec![out_c, in_c, k, k], (2.0 / fan_in).sqrt(), rng);
        Self {
            weight,
            bias: bias.then(|| Param::filled(vec![out_c], 0.0)),
            in_c,
            out_c,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let ohw = oh * ow;
        let mut col = vec![0.0f32; self.in_c * k * k * ohw];
        for c in 0..self.in_c {
            let xc = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, col: &[f32], dx: &mut [f32], h: usize, w: usize, oh: usize, ow: usize) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let ohw = oh * ow;
        for c in 0..self.in_c {
            let dxc = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let ohw = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let mut out = Tensor::zeros(x.n, self.out_c, oh, ow);
        let this = &*self;
        par::for_each_chunk_mut(&mut out.data, self.out_c * ohw, |i, o| {
            let xi = x.item(i);
            if this.is_pointwise() {
                sgemm(this.out_c, kk, ohw, &this.weight.value, false, xi, false, o, 0.0);
            } else {
                let col = this.im2col(xi, x.h, x.w, oh, ow);
                sgemm(this.out_c, kk, ohw, &this.weight.value, false, &col, false, o, 0.0);
            }
            if let Some(b) = &this.bias {
                for (c, chunk) in o.chunks_mut(ohw).enumerate() {
                    let bv = b.value[c];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        self.cache = mode.record.then(|| x.clone());
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, g: &Tensor, need_input_grad: bool) -> Option<Tensor> {
        let x = self.cache.take().expect("conv backward without recorded forward");
        let (oh, ow) = (g.h, g.w);
        let ohw = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let this = &*self;

        let n_chunks = x.n.div_ceil(GRAD_CHUNK);
        let partials: Vec<(Vec<f32>, Vec<f32>)> = par::map_range(n_chunks, |ch| {
            let mut dw = vec![0.0f32; this.out_c * kk];
            let mut db = vec![0.0f32; if this.bias.is_some() { this.out_c } else { 0 }];
            for i in ch * GRAD_CHUNK..((ch + 1) * GRAD_CHUNK).min(x.n) {
                let gi = g.item(i);
                if this.is_pointwise() {
                    sgemm(this.out_c, ohw, kk, gi, false, x.item(i), true, &mut dw, 1.0);
                } else {
                    let col = this.im2col(x.item(i), x.h, x.w, oh, ow);
                    sgemm(this.out_c, ohw, kk, gi, false, &col, true, &mut dw, 1.0);
                }
                for (c, d) in db.iter_mut().enumerate() {
                    *d += gi[c * ohw..(c + 1) * ohw].iter().sum::<f32>();
                }
            }
            (dw, db)
        });
        for (dw, db) in &partials {
            for (a, b) in self.weight.grad.iter_mut().zip(dw) {
                *a += *b;
            }
            if let Some(bias) = &mut self.bias {
                for (a, b) in bias.grad.iter_mut().zip(db) {
                    *a += *b;
                }
            }
        }

        if !need_input_grad {
            return None;
        }
        let this = &*self;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        par::for_each_chunk_mut(&mut dx.data, x.item_len(), |i, dxi| {
            let gi = g.item(i);
            if this.is_pointwise() {
                sgemm(kk, this.out_c, ohw, &this.weight.value, true, gi, false, dxi, 0.0);
            } else {
                let mut col = vec![0.0f32; kk * ohw];
                sgemm(kk, this.out_c, ohw, &this.weight.value, true, gi, false, &mut col, 0.0);
                this.col2im(&col, dxi, x.h, x.w, oh, ow);
            }
        });
        Some(dx)
    }
}

impl Module for Conv2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::filled(vec![c], 1.0),
            beta: Param::filled(vec![c], 0.0),
            running_mean: Param::buffer(vec![c], 0.0),
            running_var: Param::buffer(vec![c], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channel_stats(x: &Tensor) -> Vec<(f64, f64)> {
        par::map_range(x.c, |c| {
            let m = (x.n * x.plane()) as f64;
            let mut s = 0.0f64;
            for i in 0..x.n {
                s += x.channel(i, c).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = s / m;
            let mut ss = 0.0f64;
            for i in 0..x.n {
                ss += x
                    .channel(i, c)
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            (mean, ss / m)
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let c = x.c;
        assert_eq!(c, self.gamma.len(), "batch-norm channels");
        let (mean, inv_std): (Vec<f32>, Vec<f32>) = if mode.train {
            let stats = Self::channel_stats(x);
            let m = (x.n * x.plane()) as f64;
            for (ch, &(mu, var)) in stats.iter().enumerate() {
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let mo = self.momentum;
                self.running_mean.value[ch] = (1.0 - mo) * self.running_mean.value[ch] + mo * mu as f32;
                self.running_var.value[ch] = (1.0 - mo) * self.running_var.value[ch] + mo * unbiased as f32;
            }
            stats
                .iter()
                .map(|&(mu, var)| (mu as f32, (1.0 / (var + self.eps as f64).sqrt()) as f32))
                .unzip()
        } else {
            (
                self.running_mean.value.clone(),
                self.running_var
                    .value
                    .iter()
                    .map(|&v| 1.0 / (v + self.eps).sqrt())
                    .collect(),
            )
        };
        let p = x.plane();
        let mut xhat = x.clone();
        for i in 0..x.n {
            let item = xhat.item_mut(i);
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                item[ch * p..(ch + 1) * p]
                    .iter_mut()
                    .for_each(|v| *v = (*v - mu) * is);
            }
        }
        let mut out = xhat.clone();
        for i in 0..x.n {
            let item = out.item_mut(i);
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                item[ch * p..(ch + 1) * p]
                    .iter_mut()
                    .for_each(|v| *v = *v * g + b);
            }
        }
        self.cache = mode.record.then_some(BnCache {
            xhat,
            inv_std,
            batch_stats: mode.train,
        });
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("batch-norm backward without recorded forward");
        let xhat = &cache.xhat;
        let c = g.c;
        let p = g.plane();
        let m = (g.n * p) as f32;
        let sums: Vec<(f32, f32)> = par::map_range(c, |ch| {
            let mut sg = 0.0f64;
            let mut sgx = 0.0f64;
            for i in 0..g.n {
                for (gv, xv) in g.channel(i, ch).iter().zip(xhat.channel(i, ch)) {
                    sg += *gv as f64;
                    sgx += (*gv * *xv) as f64;
                }
            }
            (sg as f32, sgx as f32)
        });
        for (ch, &(sg, sgx)) in sums.iter().enumerate() {
            self.beta.grad[ch] += sg;
            self.gamma.grad[ch] += sgx;
        }
        let mut dx = g.clone();
        for i in 0..g.n {
            let item = dx.item_mut(i);
            let xi = xhat.item(i);
            for ch in 0..c {
                let scale = self.gamma.value[ch] * cache.inv_std[ch];
                let (sg, sgx) = sums[ch];
                let r = ch * p..(ch + 1) * p;
                if cache.batch_stats {
                    for (d, xv) in item[r.clone()].iter_mut().zip(&xi[r]) {
                        *d = scale * (*d - sg / m - *xv * sgx / m);
                    }
                } else {
                    item[r].iter_mut().for_each(|d| *d *= scale);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.gamma));
        out.push((join(prefix, "bias"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.gamma));
        out.push((join(prefix, "bias"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor, mode: Mode) -> Tensor {
        x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.mask = mode.record.then(|| x.data.iter().map(|&v| v > 0.0).collect());
        x
    }

    pub fn backward(&mut self, mut g: Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without recorded forward");
        for (d, &m) in g.data.iter_mut().zip(&mask) {
            if !m {
                *d = 0.0;
            }
        }
        g
    }
}

/// 3×3 max pooling, stride 2, padding 1.
#[derive(Debug, Clone, Default)]
pub struct MaxPool {
    cache: Option<(Vec<u32>, [usize; 4])>,
}

impl MaxPool {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let (oh, ow) = ((x.h + 2 - 3) / 2 + 1, (x.w + 2 - 3) / 2 + 1);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let mut arg = vec![0u32; out.len()];
        for i in 0..x.n {
            for c in 0..x.c {
                let src = x.channel(i, c);
                let base = (i * x.c + c) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0u32;
                        for dy in 0..3 {
                            let iy = (oy * 2 + dy) as isize - 1;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for dx in 0..3 {
                                let ix = (ox * 2 + dx) as isize - 1;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let idx = iy as usize * x.w + ix as usize;
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx as u32;
                                }
                            }
                        }
                        out.data[base + oy * ow + ox] = best;
                        arg[base + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        self.cache = mode.record.then_some((arg, x.shape()));
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let (arg, [n, c, h, w]) = self.cache.take().expect("maxpool backward without recorded forward");
        let mut dx = Tensor::zeros(n, c, h, w);
        let op = g.plane();
        for nc in 0..n * c {
            let dst = &mut dx.data[nc * h * w..(nc + 1) * h * w];
            for j in 0..op {
                dst[arg[nc * op + j] as usize] += g.data[nc * op + j];
            }
        }
        dx
    }
}

/// Spatial mean per channel: `[n, c, h, w] → [n, c, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let p = x.plane() as f32;
    let data = (0..x.n)
        .flat_map(|i| (0..x.c).map(move |c| (i, c)))
        .map(|(i, c)| x.channel(i, c).iter().sum::<f32>() / p)
        .collect();
    Tensor::matrix(x.n, x.c, data)
}

pub fn global_avg_pool_backward(g: &Tensor, h: usize, w: usize) -> Tensor {
    let p = (h * w) as f32;
    let mut dx = Tensor::zeros(g.n, g.c, h, w);
    for i in 0..g.n {
        for c in 0..g.c {
            let v = g.data[i * g.c + c] / p;
            let start = (i * g.c + c) * h * w;
            dx.data[start..start + h * w].iter_mut().for_each(|d| *d = v);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_f: usize,
    pub out_f: usize,
    cache: Option<Tensor>,
}

impl Linear {
    /// Fan-in normal weights (gain 1), zero bias.
    pub fn new<R: Rng + ?Sized>(in_f: usize, out_f: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::normal(vec![out_f, in_f], (1.0 / in_f as f32).sqrt(), rng),
            bias: Param::filled(vec![out_f], 0.0),
            in_f,
            out_f,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.item_len(), self.in_f, "linear input width");
        let mut out = vec![0.0f32; x.n * self.out_f];
        for (i, o) in out.chunks_mut(self.out_f).enumerate() {
            o.copy_from_slice(&self.bias.value);
            sgemm(1, self.in_f, self.out_f, x.item(i), false, &self.weight.value, true, o, 1.0);
        }
        self.cache = mode.record.then(|| x.clone());
        Tensor::matrix(x.n, self.out_f, out)
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let x = self.cache.take().expect("linear backward without recorded forward");
        // dW[out, in] += gᵀ[out, n] · x[n, in]
        sgemm(self.out_f, x.n, self.in_f, &g.data, true, &x.data, false, &mut self.weight.grad, 1.0);
        for i in 0..g.n {
            for (b, gv) in self.bias.grad.iter_mut().zip(g.item(i)) {
                *b += *gv;
            }
        }
        let mut dx = vec![0.0f32; x.n * self.in_f];
        sgemm(x.n, self.out_f, self.in_f, &g.data, false, &self.weight.value, false, &mut dx, 0.0);
        Tensor::from_vec(x.n, x.c, x.h, x.w, dx)
    }
}

impl Module for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Source taps for bilinear resampling along one axis (half-pixel centers).
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

/// Bilinear resize of every channel to `out_h × out_w`.
pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let ty = bilinear_taps(x.h, out_h);
    let tx = bilinear_taps(x.w, out_w);
    let mut out = Tensor::zeros(x.n, x.c, out_h, out_w);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * x.plane()..(nc + 1) * x.plane()];
        let dst = &mut out.data[nc * out_h * out_w..(nc + 1) * out_h * out_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * x.w + x0] * (1.0 - lx) + src[y0 * x.w + x1] * lx;
                let bot = src[y1 * x.w + x0] * (1.0 - lx) + src[y1 * x.w + x1] * lx;
                dst[oy * out_w + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward(g: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let ty = bilinear_taps(in_h, g.h);
    let tx = bilinear_taps(in_w, g.w);
    let mut dx = Tensor::zeros(g.n, g.c, in_h, in_w);
    for nc in 0..g.n * g.c {
        let src = &g.data[nc * g.plane()..(nc + 1) * g.plane()];
        let dst = &mut dx.data[nc * in_h * in_w..(nc + 1) * in_h * in_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = src[oy * g.w + ox];
                dst[y0 * in_w + x0] += v * (1.0 - ly) * (1.0 - lx);
                dst[y0 * in_w + x1] += v * (1.0 - ly) * lx;
                dst[y1 * in_w + x0] += v * ly * (1.0 - lx);
                dst[y1 * in_w + x1] += v * ly * lx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar objective Σ r·y for a fixed random projection r.
    fn objective(y: &Tensor, r: &[f32]) -> f64 {
        y.data.iter().zip(r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
    }

    fn check_close(analytic: f32, numeric: f64, what: &str) {
        let denom = numeric.abs().max(analytic.abs() as f64).max(1e-2);
        let rel = (analytic as f64 - numeric).abs() / denom;
        assert!(rel < 2e-2, "{what}: analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 1, 0), (1, 2, 0), (7, 2, 3)] {
            let mut conv = Conv2d::new(2, 3, k, s, p, true, &mut rng);
            let x = Tensor::randn(2, 2, 7, 7, &mut rng);
            let y = conv.forward(&x, Mode::TRAIN);
            let r: Vec<f32> = (0..y.len()).map(|i| ((i * 7919) % 13) as f32 / 13.0 - 0.5).collect();
            let g = Tensor::from_vec(y.n, y.c, y.h, y.w, r.clone());
            let dx = conv.backward(&g, true).unwrap();
            let h = 1e-2f32;
            for idx in [0usize, 5, 17, 40, 97] {
                let mut xp = x.clone();
                xp.data[idx] += h;
                let mut xm = x.clone();
                xm.data[idx] -= h;
                let fp = objective(&conv.forward(&xp, Mode::EVAL), &r);
                let fm = objective(&conv.forward(&xm, Mode::EVAL), &r);
                check_close(dx.data[idx], (fp - fm) / (2.0 * h as f64), "conv dx");
            }
            for idx in [0usize, 3, conv.weight.len() - 1] {
                let base = conv.weight.value[idx];
                conv.weight.value[idx] = base + h;
                let fp = objective(&conv.forward(&x, Mode::EVAL), &r);
                conv.weight.value[idx] = base - h;
                let fm = objective(&conv.forward(&x, Mode::EVAL), &r);
                conv.weight.value[idx] = base;
                check_close(conv.weight.grad[idx], (fp - fm) / (2.0 * h as f64), "conv dw");
            }
        }
    }

    #[test]
    fn batchnorm_train_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, 0.0, 0.3];
        let x = Tensor::randn(3, 3, 4, 4, &mut rng);
        let y = bn.forward(&x, Mode::TRAIN);
        let r: Vec<f32> = (0..y.len()).map(|i| ((i * 31) % 17) as f32 / 17.0 - 0.5).collect();
        let dx = bn.backward(&Tensor::from_vec(y.n, y.c, y.h, y.w, r.clone()));
        let h = 1e-2f32;
        for idx in [0usize, 11, 50, 95, 143] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fp = objective(&bn.clone().forward(&xp, Mode::TRAIN), &r);
            let fm = objective(&bn.clone().forward(&xm, Mode::TRAIN), &r);
            check_close(dx.data[idx], (fp - fm) / (2.0 * h as f64), "bn dx");
        }
    }

    #[test]
    fn maxpool_and_upsample_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(1, 2, 5, 6, &mut rng);
        let up = upsample_bilinear(&x, 10, 12);
        let g = Tensor::randn(1, 2, 10, 12, &mut rng);
        // <up(x), g> == <x, up*(g)>
        let lhs: f64 = up.data.iter().zip(&g.data).map(|(a, b)| (*a * *b) as f64).sum();
        let back = upsample_bilinear_backward(&g, 5, 6);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| (*a * *b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} {rhs}");

        let mut mp = MaxPool::default();
        let y = mp.forward(&x, Mode::TRAIN);
        assert_eq!((y.h, y.w), (3, 3));
        let dx = mp.backward(&Tensor::from_vec(1, 2, 3, 3, vec![1.0; 18]));
        assert!((dx.data.iter().sum::<f32>() - 18.0).abs() < 1e-6);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new(5, 3, &mut rng);
        let x = Tensor::randn(4, 5, 1, 1, &mut rng);
        let y = lin.forward(&x, Mode::TRAIN);
        let r: Vec<f32> = (0..y.len()).map(|i| i as f32 * 0.1 - 0.6).collect();
        let dx = lin.backward(&Tensor::matrix(4, 3, r.clone()));
        let h = 1e-2f32;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fp = objective(&lin.forward(&xp, Mode::EVAL), &r);
            let fm = objective(&lin.forward(&xm, Mode::EVAL), &r);
            check_close(dx.data[idx], (fp - fm) / (2.0 * h as f64), "linear dx");
        }
        let base = lin.weight.value[7];
        lin.weight.value[7] = base + h;
        let fp = objective(&lin.forward(&x, Mode::EVAL), &r);
        lin.weight.value[7] = base - h;
        let fm = objective(&lin.forward(&x, Mode::EVAL), &r);
        check_close(lin.weight.grad[7], (fp - fm) / (2.0 * h as f64), "linear dw");
    }
}
