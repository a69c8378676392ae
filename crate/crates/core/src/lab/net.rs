//! A small fixed-architecture multilayer perceptron. The input is the
//! concatenation `[z | t | c]` of the sample, the scalar timestep, and an
//! optional condition vector; the output has the dimension of `z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(&self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Identity => u,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn random(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
        Self {
            weights: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_dim],
            activation,
            in_dim,
            out_dim,
        }
    }

    /// `y = act(Wx + b)`, also returning the linear part consumers may need.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let u: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            out.push(self.activation.apply(u));
        }
        out
    }
}

/// Dense velocity-field network over `[z | t | c]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub z_dim: usize,
    pub cond_dim: usize,
}

impl DenseNet {
    /// Builds a network with tanh hidden layers of the given widths and an
    /// identity output layer back to `z_dim`.
    pub fn new(z_dim: usize, cond_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = z_dim + 1 + cond_dim;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &width in hidden {
            layers.push(Layer::random(prev, width, Activation::Tanh, &mut rng));
            prev = width;
        }
        layers.push(Layer::random(prev, z_dim, Activation::Identity, &mut rng));
        Self {
            layers,
            z_dim,
            cond_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.z_dim + 1 + self.cond_dim
    }

    /// Assembles the `[z | t | c]` input vector; a missing condition is the
    /// zero vector (the unconditional branch).
    pub fn assemble_input(&self, z: &[f64], t: f64, cond: Option<&[f64]>) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(z);
        input.push(t);
        match cond {
            Some(c) => input.extend_from_slice(c),
            None => input.extend(std::iter::repeat(0.0).take(self.cond_dim)),
        }
        input
    }

    /// Evaluates the velocity field at `(z, t, c)`.
    pub fn forward(&self, z: &[f64], t: f64, cond: Option<&[f64]>) -> Vec<f64> {
        let mut x = self.assemble_input(z, t, cond);
        for layer in &self.layers {
            x = layer.apply(&x);
        }
        x
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}
