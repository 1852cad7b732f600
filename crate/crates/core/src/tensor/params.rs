use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, keyed by dot-separated path
/// (`acoustic.layers.0.attn.wq`). Iteration order is lexicographic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParameters(vec![name.to_string()]))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Drops every parameter whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.tensors.len();
        self.tensors.retain(|k, _| !k.starts_with(prefix));
        before - self.tensors.len()
    }

    /// Xavier-uniform tensor, seeded from `(seed, name)` so that adding or
    /// removing other parameters never changes this one. Values are rounded
    /// to `f32` so checkpoints are lossless.
    pub fn init_xavier(&mut self, seed: u64, name: &str, shape: Vec<usize>, fan_in: usize, fan_out: usize) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, name));
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.random_range(-bound..bound) as f32 as f64)
            .collect();
        self.insert(name, Tensor { shape, data });
    }

    pub fn init_const(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        self.insert(name, Tensor::filled(shape, value));
    }
}

/// Derives an independent stream seed from a base seed and a label.
pub(crate) fn mix_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parameter gradients, keyed like [`ParamStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn accumulate(&mut self, name: &str, grad: &[f64]) {
        match self.grads.get_mut(name) {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad.to_vec());
            }
        }
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (k, g) in &other.grads {
            self.accumulate(k, g);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_name_seeded_and_f32_exact() {
        let mut a = ParamStore::new();
        a.init_xavier(7, "w", vec![3, 4], 3, 4);
        let mut b = ParamStore::new();
        b.init_xavier(7, "other", vec![2], 1, 1);
        b.init_xavier(7, "w", vec![3, 4], 3, 4);
        assert_eq!(a.get("w"), b.get("w"));
        for &v in a.get("w").unwrap().data() {
            assert_eq!(v, v as f32 as f64);
            assert!(v.abs() <= (6.0f64 / 7.0).sqrt());
        }
    }

    #[test]
    fn gradients_merge_in_order() {
        let mut g = Gradients::new();
        g.accumulate("a", &[1.0, 2.0]);
        let mut h = Gradients::new();
        h.accumulate("a", &[0.5, 0.5]);
        h.accumulate("b", &[3.0]);
        g.merge(&h);
        assert_eq!(g.get("a").unwrap(), &[1.5, 2.5]);
        assert_eq!(g.get("b").unwrap(), &[3.0]);
    }
}
