//! Low-rank adapters for [`DenseNet`] layers: each adapted layer carries
//! factors `A` (`r×in`) and `B` (`out×r`) contributing the additive update
//! `(α/r)·B·A` on top of the frozen base weights. `B` starts at zero, so a
//! fresh adapter leaves the network bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::net::DenseNet;

/// Ranks exercised by the presets (`α = r` in both).
pub const LORA_RANK_PRESETS: [usize; 2] = [32, 128];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraLayer {
    /// Row-major `rank × in_dim`.
    pub a: Vec<f64>,
    /// Row-major `out_dim × rank`.
    pub b: Vec<f64>,
    pub rank: usize,
    pub alpha: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LoraLayer {
    /// Update scale `α / r`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `A · x`.
    pub fn down(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.rank)
            .map(|r| {
                self.a[r * self.in_dim..(r + 1) * self.in_dim]
                    .iter()
                    .zip(x)
                    .map(|(a, v)| a * v)
                    .sum()
            })
            .collect()
    }

    /// `(α/r) · B · h` added onto `acc`.
    pub fn up_into(&self, h: &[f64], acc: &mut [f64]) {
        debug_assert_eq!(h.len(), self.rank);
        debug_assert_eq!(acc.len(), self.out_dim);
        let s = self.scale();
        for (o, out) in acc.iter_mut().enumerate() {
            let row = &self.b[o * self.rank..(o + 1) * self.rank];
            *out += s * row.iter().zip(h).map(|(b, v)| b * v).sum::<f64>();
        }
    }

    /// Dense `(α/r)·B·A`, `out_dim × in_dim` row-major.
    pub fn delta(&self) -> Vec<f64> {
        let s = self.scale();
        let mut d = vec![0.0; self.out_dim * self.in_dim];
        for o in 0..self.out_dim {
            for r in 0..self.rank {
                let b = self.b[o * self.rank + r];
                if b == 0.0 {
                    continue;
                }
                let a_row = &self.a[r * self.in_dim..(r + 1) * self.in_dim];
                let d_row = &mut d[o * self.in_dim..(o + 1) * self.in_dim];
                for (dv, av) in d_row.iter_mut().zip(a_row) {
                    *dv += s * b * av;
                }
            }
        }
        d
    }
}

/// One adapter per network layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub layers: Vec<LoraLayer>,
}

impl LoraAdapter {
    /// Adapter with the standard `α = r` scaling convention.
    pub fn new(net: &DenseNet, rank: usize, seed: u64) -> Self {
        Self::with_alpha(net, rank, rank as f64, seed)
    }

    /// `A ~ N(0, 1/√in)`, `B = 0`: the adapted network starts exactly equal
    /// to the base network.
    pub fn with_alpha(net: &DenseNet, rank: usize, alpha: f64, seed: u64) -> Self {
        assert!(rank > 0, "rank must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net
            .layers
            .iter()
            .map(|layer| {
                let normal =
                    Normal::new(0.0, 1.0 / (layer.in_dim as f64).sqrt()).expect("positive std");
                LoraLayer {
                    a: (0..rank * layer.in_dim).map(|_| normal.sample(&mut rng)).collect(),
                    b: vec![0.0; layer.out_dim * rank],
                    rank,
                    alpha,
                    in_dim: layer.in_dim,
                    out_dim: layer.out_dim,
                }
            })
            .collect();
        Self { layers }
    }

    /// Folds the low-rank updates into dense weights: `W' = W + (α/r)·B·A`.
    pub fn merge(&self, net: &DenseNet) -> DenseNet {
        assert_eq!(self.layers.len(), net.layers.len(), "adapter/net mismatch");
        let mut merged = net.clone();
        for (layer, lora) in merged.layers.iter_mut().zip(&self.layers) {
            let delta = lora.delta();
            for (w, d) in layer.weights.iter_mut().zip(delta) {
                *w += d;
            }
        }
        merged
    }
}
