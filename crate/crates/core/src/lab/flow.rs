//! Flow-matching objective and sampler.
//!
//! Training regresses the velocity field onto `ε − x0` at interpolated
//! points `z = (1−t)·x0 + t·ε`; gradients are computed by analytically
//! derived backpropagation for the fixed dense architecture. Sampling
//! integrates `dz/dt = v(z, t, c)` from `t = 1` to `t = 0` with uniform
//! Euler steps, after folding any low-rank adapter into the weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::lora::LoraAdapter;
use super::net::DenseNet;
use super::LabError;

/// A batch of flow-matching samples: data points, matched noise, and
/// per-sample timesteps.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    x0: Vec<f64>,
    eps: Vec<f64>,
    t: Vec<f64>,
    n: usize,
    dim: usize,
}

impl FlowBatch {
    pub fn new(x0: Vec<f64>, eps: Vec<f64>, t: Vec<f64>, dim: usize) -> Result<Self, LabError> {
        if dim == 0 || x0.is_empty() {
            return Err(LabError::EmptyDataset);
        }
        if x0.len() % dim != 0 {
            return Err(LabError::DimensionMismatch {
                what: "x0 length",
                expected: dim,
                got: x0.len(),
            });
        }
        let n = x0.len() / dim;
        if eps.len() != x0.len() {
            return Err(LabError::DimensionMismatch {
                what: "eps length",
                expected: x0.len(),
                got: eps.len(),
            });
        }
        if t.len() != n {
            return Err(LabError::DimensionMismatch {
                what: "t length",
                expected: n,
                got: t.len(),
            });
        }
        Ok(Self { x0, eps, t, n, dim })
    }

    /// Draws a batch from dataset rows: `x0` uniformly with replacement,
    /// `ε ~ N(0, I)`, `t ~ U[0,1)`. Returns the chosen row indices so the
    /// caller can gather matching conditions.
    pub fn draw(
        points: &[f64],
        dim: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Self, Vec<usize>) {
        let n_points = points.len() / dim;
        let indices: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..n_points))
            .collect();
        let mut x0 = Vec::with_capacity(batch_size * dim);
        for &i in &indices {
            x0.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        let t: Vec<f64> = (0..batch_size).map(|_| rng.random::<f64>()).collect();
        let eps: Vec<f64> = (0..batch_size * dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        (
            Self {
                x0,
                eps,
                t,
                n: batch_size,
                dim,
            },
            indices,
        )
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self, i: usize) -> &[f64] {
        &self.x0[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eps(&self, i: usize) -> &[f64] {
        &self.eps[i * self.dim..(i + 1) * self.dim]
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t[i]
    }

    /// Interpolated noisy point `z = (1−t)·x0 + t·ε`.
    pub fn interpolant(&self, i: usize) -> Vec<f64> {
        let t = self.t[i];
        self.x0(i)
            .iter()
            .zip(self.eps(i))
            .map(|(x, e)| (1.0 - t) * x + t * e)
            .collect()
    }

    /// Regression target `ε − x0`.
    pub fn target(&self, i: usize) -> Vec<f64> {
        self.eps(i)
            .iter()
            .zip(self.x0(i))
            .map(|(e, x)| e - x)
            .collect()
    }
}

/// Per-layer gradients of the dense weights and biases.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

/// Per-layer gradients of the adapter factors.
#[derive(Debug, Clone)]
pub struct LoraLayerGrads {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoraGrads {
    pub layers: Vec<LoraLayerGrads>,
}

/// Per-sample forward trace: layer inputs, outputs, and the adapter's
/// down-projections when present.
struct Trace {
    /// `inputs[l]` is the input to layer `l`; `inputs[L]` is the output.
    inputs: Vec<Vec<f64>>,
    /// `down[l] = A_l · inputs[l]` for the adapter path.
    down: Vec<Vec<f64>>,
}

fn forward_trace(net: &DenseNet, adapter: Option<&LoraAdapter>, input: Vec<f64>) -> Trace {
    let mut inputs = Vec::with_capacity(net.layers.len() + 1);
    let mut down = Vec::with_capacity(net.layers.len());
    let mut x = input;
    for (l, layer) in net.layers.iter().enumerate() {
        let mut pre: Vec<f64> = (0..layer.out_dim)
            .map(|o| {
                layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim]
                    .iter()
                    .zip(&x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + layer.bias[o]
            })
            .collect();
        if let Some(adapter) = adapter {
            let lora = &adapter.layers[l];
            let h = lora.down(&x);
            lora.up_into(&h, &mut pre);
            down.push(h);
        }
        let y: Vec<f64> = pre.iter().map(|&u| layer.activation.apply(u)).collect();
        inputs.push(x);
        x = y;
    }
    inputs.push(x);
    Trace { inputs, down }
}

fn check_cond(
    net: &DenseNet,
    cond: Option<&[f64]>,
    n: usize,
) -> Result<(), LabError> {
    match cond {
        Some(c) => {
            if net.cond_dim == 0 {
                return Err(LabError::DimensionMismatch {
                    what: "condition on an unconditional net",
                    expected: 0,
                    got: c.len(),
                });
            }
            if c.len() != n * net.cond_dim {
                return Err(LabError::DimensionMismatch {
                    what: "condition batch length",
                    expected: n * net.cond_dim,
                    got: c.len(),
                });
            }
        }
        None => {}
    }
    Ok(())
}

/// Flow-matching loss and gradients of every dense parameter.
///
/// The loss is the batch mean of `‖v(z,t,c) − (ε − x0)‖²`; `cond` is a
/// row-major `n × cond_dim` matrix when present.
pub fn flow_loss(
    net: &DenseNet,
    batch: &FlowBatch,
    cond: Option<&[f64]>,
) -> Result<(f64, NetGrads), LabError> {
    if batch.dim() != net.z_dim {
        return Err(LabError::DimensionMismatch {
            what: "batch dimension",
            expected: net.z_dim,
            got: batch.dim(),
        });
    }
    check_cond(net, cond, batch.len())?;

    let mut grads = NetGrads {
        layers: net
            .layers
            .iter()
            .map(|l| LayerGrads {
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect(),
    };
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let sample_cond = cond.map(|c| &c[i * net.cond_dim..(i + 1) * net.cond_dim]);
        let input = net.assemble_input(&batch.interpolant(i), batch.t(i), sample_cond);
        let trace = forward_trace(net, None, input);
        let output = trace.inputs.last().expect("trace has output");
        let target = batch.target(i);

        // d(mean ‖v − target‖²)/dv = 2(v − target)/n
        let mut delta: Vec<f64> = output
            .iter()
            .zip(&target)
            .map(|(v, t)| {
                let d = v - t;
                loss += d * d;
                2.0 * d / batch.len() as f64
            })
            .collect();

        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let x = &trace.inputs[l];
            let y = &trace.inputs[l + 1];
            // through the activation
            for (d, out) in delta.iter_mut().zip(y) {
                *d *= layer.activation.derivative_from_output(*out);
            }
            let g = &mut grads.layers[l];
            let mut next_delta = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                g.bias[o] += d;
                let w_row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let g_row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i_in in 0..layer.in_dim {
                    g_row[i_in] += d * x[i_in];
                    next_delta[i_in] += d * w_row[i_in];
                }
            }
            delta = next_delta;
        }
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Flow-matching loss with gradients flowing only into the adapter factors;
/// the base network stays frozen.
pub fn flow_loss_lora(
    net: &DenseNet,
    adapter: &LoraAdapter,
    batch: &FlowBatch,
    cond: Option<&[f64]>,
) -> Result<(f64, LoraGrads), LabError> {
    if batch.dim() != net.z_dim {
        return Err(LabError::DimensionMismatch {
            what: "batch dimension",
            expected: net.z_dim,
            got: batch.dim(),
        });
    }
    check_cond(net, cond, batch.len())?;

    let mut grads = LoraGrads {
        layers: adapter
            .layers
            .iter()
            .map(|l| LoraLayerGrads {
                a: vec![0.0; l.a.len()],
                b: vec![0.0; l.b.len()],
            })
            .collect(),
    };
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let sample_cond = cond.map(|c| &c[i * net.cond_dim..(i + 1) * net.cond_dim]);
        let input = net.assemble_input(&batch.interpolant(i), batch.t(i), sample_cond);
        let trace = forward_trace(net, Some(adapter), input);
        let output = trace.inputs.last().expect("trace has output");
        let target = batch.target(i);

        let mut delta: Vec<f64> = output
            .iter()
            .zip(&target)
            .map(|(v, t)| {
                let d = v - t;
                loss += d * d;
                2.0 * d / batch.len() as f64
            })
            .collect();

        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let lora = &adapter.layers[l];
            let x = &trace.inputs[l];
            let y = &trace.inputs[l + 1];
            let h = &trace.down[l];
            for (d, out) in delta.iter_mut().zip(y) {
                *d *= layer.activation.derivative_from_output(*out);
            }
            let s = lora.scale();
            let g = &mut grads.layers[l];

            // dB[o,r] += s · δ[o] · h[r]
            for o in 0..layer.out_dim {
                let d = delta[o];
                let b_grad = &mut g.b[o * lora.rank..(o + 1) * lora.rank];
                for (bg, hv) in b_grad.iter_mut().zip(h) {
                    *bg += s * d * hv;
                }
            }
            // dA[r,i] += s · (Bᵀδ)[r] · x[i]
            let mut bt_delta = vec![0.0; lora.rank];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let b_row = &lora.b[o * lora.rank..(o + 1) * lora.rank];
                for (acc, b) in bt_delta.iter_mut().zip(b_row) {
                    *acc += b * d;
                }
            }
            for r in 0..lora.rank {
                let coeff = s * bt_delta[r];
                let a_grad = &mut g.a[r * lora.in_dim..(r + 1) * lora.in_dim];
                for (ag, xv) in a_grad.iter_mut().zip(x) {
                    *ag += coeff * xv;
                }
            }
            // δ_in = (W + sBA)ᵀ δ
            let mut next_delta = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let w_row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (nd, w) in next_delta.iter_mut().zip(w_row) {
                    *nd += d * w;
                }
            }
            for r in 0..lora.rank {
                let coeff = s * bt_delta[r];
                let a_row = &lora.a[r * lora.in_dim..(r + 1) * lora.in_dim];
                for (nd, a) in next_delta.iter_mut().zip(a_row) {
                    *nd += coeff * a;
                }
            }
            delta = next_delta;
        }
    }
    Ok((loss / batch.len() as f64, grads))
}

/// Euler-integrates `dz/dt = v(z, t, c)` from `t = 1` down to `t = 0` in
/// `n_steps` uniform steps, starting from `z0`.
pub fn integrate(net: &DenseNet, z0: &[f64], n_steps: usize, cond: Option<&[f64]>) -> Vec<f64> {
    assert!(n_steps > 0, "need at least one Euler step");
    let dt = 1.0 / n_steps as f64;
    let mut z = z0.to_vec();
    for k in 0..n_steps {
        let t = 1.0 - k as f64 * dt;
        let v = net.forward(&z, t, cond);
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi -= dt * vi;
        }
    }
    z
}

/// Draws `n_samples` points by integrating the flow from standard-normal
/// noise. Any adapter is merged into the weights first; `cond` applies to
/// every sample.
pub fn sample_flow(
    net: &DenseNet,
    adapter: Option<&LoraAdapter>,
    n_samples: usize,
    n_steps: usize,
    cond: Option<&[f64]>,
    seed: u64,
) -> Vec<f64> {
    let merged;
    let net = match adapter {
        Some(a) => {
            merged = a.merge(net);
            &merged
        }
        None => net,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples * net.z_dim);
    for _ in 0..n_samples {
        let z0: Vec<f64> = (0..net.z_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        out.extend(integrate(net, &z0, n_steps, cond));
    }
    out
}
