//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Hidden layers use SiLU, `z * sigmoid(z)`, which is smooth everywhere so
//! finite-difference gradient checks are well conditioned. The output layer
//! is affine. Parameters are `f64` and laid out layer by layer, weights
//! (row-major, `out x in`) before biases.

use rand::Rng;

use crate::rng::{ChainRng, NoiseSource};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    n_in: usize,
    n_out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().copied());
        for (o, row) in out.iter_mut().zip(self.w.chunks_exact(self.n_in)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// All-zero network with the given layer widths (input first).
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an mlp needs input and output widths");
        Self {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random(widths: &[usize], rng: &mut ChainRng) -> Self {
        let mut net = Self::zeros(widths);
        for layer in &mut net.layers {
            let scale = 1.0 / (layer.n_in as f64).sqrt();
            rng.fill_standard_normal(&mut layer.w);
            layer.w.iter_mut().for_each(|v| *v *= scale);
        }
        net
    }

    /// Same shape, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.widths())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].n_in];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache)
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut Cache) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "mlp input width");
        let n = self.layers.len();
        cache.inputs.resize(n, Vec::new());
        cache.pre.resize(n, Vec::new());
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (inputs, pre) = (&mut cache.inputs, &mut cache.pre);
            layer.affine(&inputs[i], &mut pre[i]);
            if i + 1 < n {
                let next: Vec<f64> = pre[i].iter().map(|&z| silu(z)).collect();
                inputs[i + 1] = next;
            }
        }
        cache.pre[n - 1].clone()
    }

    /// Activations of the last hidden layer.
    pub fn penultimate(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache);
        cache.inputs.pop().unwrap()
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`
    /// for the pass recorded in `cache`.
    pub fn backward(&self, cache: &Cache, d_out: &[f64], grads: &mut Mlp) {
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            let input = &cache.inputs[i];
            for (o, &d) in delta.iter().enumerate() {
                g.b[o] += d;
                let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &z) in prev.iter_mut().zip(&cache.pre[i - 1]) {
                *p *= silu_grad(z);
            }
            delta = prev;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
    }

    pub fn params(&self) -> Vec<f64> {
        self.param_slices().flatten().copied().collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count(), "parameter count");
        let mut it = values.iter();
        for s in self.param_slices_mut() {
            for v in s.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for s in self.param_slices_mut() {
            if index < s.len() {
                return &mut s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat indices of every bias parameter.
    pub fn bias_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = 0;
        for l in &self.layers {
            offset += l.w.len();
            out.extend(offset..offset + l.b.len());
            offset += l.b.len();
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().flatten().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        for s in self.param_slices_mut() {
            s.fill(value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Sum of squared parameters.
    pub fn sq_norm(&self) -> f64 {
        self.param_slices().flatten().map(|v| v * v).sum()
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Mlp, factor: f64) {
        for (a, b) in self.param_slices_mut().zip(other.param_slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Mlp>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) {
        if self.momentum == 0.0 {
            net.add_scaled(grads, -self.learning_rate);
            return;
        }
        let v = self.velocity.get_or_insert_with(|| net.zeros_like());
        v.scale(self.momentum);
        v.add_scaled(grads, 1.0);
        net.add_scaled(v, -self.learning_rate);
    }
}

/// Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChainRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
