use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense NCHW tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length does not match shape");
        Self { n, c, h, w, data }
    }

    /// `[n, features]` matrix stored as `[n, features, 1, 1]`.
    pub fn matrix(n: usize, features: usize, data: Vec<f32>) -> Self {
        Self::from_vec(n, features, 1, 1, data)
    }

    pub fn randn<R: Rng + ?Sized>(n: usize, c: usize, h: usize, w: usize, rng: &mut R) -> Self {
        let data = (0..n * c * h * w)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self::from_vec(n, c, h, w, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per sample.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.item_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[f32] {
        let p = self.plane();
        let start = i * self.item_len() + c * p;
        &self.data[start..start + p]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    /// Stack single-sample tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "cannot stack an empty list");
        let (c, h, w) = (items[0].c, items[0].h, items[0].w);
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for t in items {
            assert_eq!((t.c, t.h, t.w), (c, h, w), "stack shape mismatch");
            data.extend_from_slice(&t.data);
            n += t.n;
        }
        Tensor::from_vec(n, c, h, w, data)
    }

    /// Select samples by index.
    pub fn select(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.item_len());
        for &i in idx {
            data.extend_from_slice(self.item(i));
        }
        Tensor::from_vec(idx.len(), self.c, self.h, self.w, data)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Concatenate along channels.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shape mismatch");
        let c = a.c + b.c;
        let mut data = Vec::with_capacity(a.n * c * a.plane());
        for i in 0..a.n {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Tensor::from_vec(a.n, c, a.h, a.w, data)
    }

    /// Inverse of [`Tensor::concat_channels`]: split after `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        let c2 = self.c - c_first;
        let p = self.plane();
        let mut a = Vec::with_capacity(self.n * c_first * p);
        let mut b = Vec::with_capacity(self.n * c2 * p);
        for i in 0..self.n {
            let item = self.item(i);
            a.extend_from_slice(&item[..c_first * p]);
            b.extend_from_slice(&item[c_first * p..]);
        }
        (
            Tensor::from_vec(self.n, c_first, self.h, self.w, a),
            Tensor::from_vec(self.n, c2, self.h, self.w, b),
        )
    }
}

/// Row-major single-precision GEMM: `c = a·b + beta·c`.
///
/// `a` is `m×k` (or `k×m` when `a_t`), `b` is `k×n` (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe in-bounds views.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
