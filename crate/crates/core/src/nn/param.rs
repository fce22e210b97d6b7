use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// A named weight blob with its gradient accumulator.
///
/// Non-trainable params (batch-norm running statistics) are serialized with
/// the model but never touched by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![v; len])
    }

    pub fn buffer(shape: Vec<usize>, v: f32) -> Self {
        let mut p = Self::filled(shape, v);
        p.trainable = false;
        p
    }

    /// Normal(0, std) initialization.
    pub fn normal<R: Rng + ?Sized>(shape: Vec<usize>, std: f32, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let dist = Normal::new(0.0f32, std).expect("std must be finite and positive");
        let value = (0..len).map(|_| dist.sample(rng)).collect();
        Self::new(shape, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Little-endian byte image of the values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.value.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_le_bytes()))
    }
}

/// Anything that owns named params.
pub trait Module {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&self, prefix: &str) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.params(prefix, &mut out);
        out
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.params_mut(prefix, &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut("") {
            p.zero_grad();
        }
    }

    /// SHA-256 over every blob, keyed by path, in visiting order.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.named_params("") {
            h.update(name.as_bytes());
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
