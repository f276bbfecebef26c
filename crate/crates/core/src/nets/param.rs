use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), value: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f32) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.fill(v);
        p
    }

    /// Uniform in `±1/√fan_in`, drawn from a stream keyed by (seed, name) so
    /// that layers shared between configurations start identically.
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, seed: u64) -> Self {
        let mut p = Self::zeros(name, shape);
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&p.name));
        p.value.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Anything that owns parameters.
pub trait HasParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}
