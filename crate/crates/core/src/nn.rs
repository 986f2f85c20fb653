//! Parameter containers, the few layer types the networks are built from,
//! and the adaptive-moment optimizer.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Tape, Var};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Float> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {}", name);
        self.names.push(name);
        self.tensors.push(Arc::new(t));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Record every parameter on `tape`; `trainable` controls gradient flow.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf_shared(t.clone())
                } else {
                    tape.constant_shared(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Replace a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, t: Tensor<T>) {
        assert_eq!(self.tensors[id.0].shape(), t.shape(), "set: shape change");
        self.tensors[id.0] = Arc::new(t);
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Bitwise equality of all tensors and names.
    pub fn same_as(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape() && bits_equal(a.data(), b.data()))
    }
}

pub(crate) fn bits_equal<T: Float>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}

/// Parameters of one store recorded on a tape.
pub struct Bound<'t, T: Float> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Float> Bound<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradients for every parameter, zeros where none flowed.
    pub fn grads(&self, g: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| g.get_or_zeros(*v)).collect()
    }
}

/// Seeded Gaussian initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal<T: Float>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// He-normal for a leaky rectifier with slope 0.2.
    pub fn he<T: Float>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let gain = (2.0 / (1.0 + 0.2f64 * 0.2)).sqrt();
        self.normal(shape, gain / (fan_in as f64).sqrt())
    }
}

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            init.he(&[out_ch, in_ch, kernel, kernel], fan_in),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            stride,
            pad: kernel / 2,
            in_ch,
            out_ch,
        }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p.get(self.weight), self.bias.map(|b| p.get(b)), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.he(&[out_dim, in_dim], in_dim));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self { weight, bias }
    }

    /// Linear layer whose bias starts at `bias_init` instead of zero.
    pub fn with_bias_init<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias_init: f64,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.he(&[out_dim, in_dim], in_dim));
        let bias = Some(store.add(format!("{name}.bias"), Tensor::full(&[out_dim], T::lit(bias_init))));
        Self { weight, bias }
    }

    pub fn forward<'t, T: Float>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.linear(p.get(self.weight), self.bias.map(|b| p.get(b)))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Float> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<_> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::from_f64(&[2], &[3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&store, 0.1, 0.9, 0.999);
        for _ in 0..500 {
            let tape = Tape::new();
            let b = store.bind(&tape, true);
            let loss = b.get(id).square().sum();
            let g = tape.backward(loss);
            let grads = b.grads(&g);
            drop(b);
            drop(tape);
            opt.update(&mut store, &grads);
        }
        assert!(store.get(id).max_abs() < 1e-2);
    }

    #[test]
    fn init_is_seeded() {
        let a: Tensor<f32> = Init::new(7).he(&[4, 4], 4);
        let b: Tensor<f32> = Init::new(7).he(&[4, 4], 4);
        let c: Tensor<f32> = Init::new(8).he(&[4, 4], 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
