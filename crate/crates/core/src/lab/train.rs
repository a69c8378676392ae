//! SGD-with-momentum training of the flow objective, either over every dense
//! parameter or over the adapter factors with a frozen base.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{flow_loss, flow_loss_lora, FlowBatch};
use super::lora::LoraAdapter;
use super::net::DenseNet;
use super::LabError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Probability of replacing a sample's condition with the zero vector,
    /// training the unconditional branch alongside the conditional one.
    pub cond_dropout_p: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-2,
            batch_size: 64,
            cond_dropout_p: 0.5,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Training data: flattened row-major points with optional per-point
/// condition vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<f64>,
    conds: Option<Vec<f64>>,
    n: usize,
    dim: usize,
    cond_dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self, LabError> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(LabError::EmptyDataset);
        }
        let n = points.len() / dim;
        Ok(Self {
            points,
            conds: None,
            n,
            dim,
            cond_dim: 0,
        })
    }

    pub fn with_conditions(
        points: Vec<f64>,
        dim: usize,
        conds: Vec<f64>,
        cond_dim: usize,
    ) -> Result<Self, LabError> {
        let mut data = Self::new(points, dim)?;
        if cond_dim == 0 || conds.len() != data.n * cond_dim {
            return Err(LabError::DimensionMismatch {
                what: "condition table",
                expected: data.n * cond_dim,
                got: conds.len(),
            });
        }
        data.conds = Some(conds);
        data.cond_dim = cond_dim;
        Ok(data)
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

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

fn validate(net: &DenseNet, data: &Dataset, cfg: &TrainConfig) -> Result<(), LabError> {
    if data.is_empty() {
        return Err(LabError::EmptyDataset);
    }
    if data.dim != net.z_dim {
        return Err(LabError::DimensionMismatch {
            what: "dataset dimension",
            expected: net.z_dim,
            got: data.dim,
        });
    }
    if data.cond_dim != net.cond_dim {
        return Err(LabError::DimensionMismatch {
            what: "dataset condition dimension",
            expected: net.cond_dim,
            got: data.cond_dim,
        });
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(LabError::BadConfig(
            "steps and batch_size must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.cond_dropout_p) {
        return Err(LabError::BadConfig(format!(
            "cond_dropout_p {} outside [0,1]",
            cfg.cond_dropout_p
        )));
    }
    Ok(())
}

/// Draws the batch and its (dropout-masked) conditions for one step.
fn draw_step(
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (FlowBatch, Option<Vec<f64>>) {
    let (batch, indices) = FlowBatch::draw(&data.points, data.dim, cfg.batch_size, rng);
    let cond = data.conds.as_ref().map(|table| {
        let mut cond = Vec::with_capacity(cfg.batch_size * data.cond_dim);
        for &i in &indices {
            let dropped = rng.random::<f64>() < cfg.cond_dropout_p;
            if dropped {
                cond.extend(std::iter::repeat(0.0).take(data.cond_dim));
            } else {
                cond.extend_from_slice(&table[i * data.cond_dim..(i + 1) * data.cond_dim]);
            }
        }
        cond
    });
    (batch, cond)
}

/// Trains every dense parameter of the network.
pub fn train_net(
    net: &mut DenseNet,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, LabError> {
    validate(net, data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = net
        .layers
        .iter()
        .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
        .collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (batch, cond) = draw_step(data, cfg, &mut rng);
        let (loss, grads) = flow_loss(net, &batch, cond.as_deref())?;
        if !loss.is_finite() {
            return Err(LabError::NonFiniteLoss { step });
        }
        trace.push(loss);
        for (layer, (grad, (vw, vb))) in net
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(velocity.iter_mut()))
        {
            for ((w, g), v) in layer.weights.iter_mut().zip(&grad.weights).zip(vw.iter_mut()) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *w += *v;
            }
            for ((b, g), v) in layer.bias.iter_mut().zip(&grad.bias).zip(vb.iter_mut()) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *b += *v;
            }
        }
    }
    let final_loss = *trace.last().expect("steps > 0");
    Ok(TrainReport {
        loss_trace: trace,
        final_loss,
    })
}

/// Trains only the adapter factors; the base network is frozen.
pub fn train_lora(
    net: &DenseNet,
    adapter: &mut LoraAdapter,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, LabError> {
    validate(net, data, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = adapter
        .layers
        .iter()
        .map(|l| (vec![0.0; l.a.len()], vec![0.0; l.b.len()]))
        .collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (batch, cond) = draw_step(data, cfg, &mut rng);
        let (loss, grads) = flow_loss_lora(net, adapter, &batch, cond.as_deref())?;
        if !loss.is_finite() {
            return Err(LabError::NonFiniteLoss { step });
        }
        trace.push(loss);
        for (lora, (grad, (va, vb))) in adapter
            .layers
            .iter_mut()
            .zip(grads.layers.iter().zip(velocity.iter_mut()))
        {
            for ((a, g), v) in lora.a.iter_mut().zip(&grad.a).zip(va.iter_mut()) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *a += *v;
            }
            for ((b, g), v) in lora.b.iter_mut().zip(&grad.b).zip(vb.iter_mut()) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *b += *v;
            }
        }
    }
    let final_loss = *trace.last().expect("steps > 0");
    Ok(TrainReport {
        loss_trace: trace,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::flow::sample_flow;
    use crate::lab::net::Activation;

    #[test]
    fn training_is_seed_deterministic() {
        let data = Dataset::new(vec![0.5, -0.5, 0.8, 0.1, -0.3, 0.9], 3).unwrap();
        let cfg = TrainConfig {
            steps: 50,
            ..Default::default()
        };
        let mut a = DenseNet::new(3, 0, &[8], 1);
        let mut b = DenseNet::new(3, 0, &[8], 1);
        let ra = train_net(&mut a, &data, &cfg).unwrap();
        let rb = train_net(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra.loss_trace, rb.loss_trace);
        assert_eq!(a.layers[0].weights, b.layers[0].weights);
    }

    /// Loss of the net on a large fresh evaluation batch.
    fn eval_loss(net: &DenseNet, points: &[f64], dim: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (batch, _) = crate::lab::flow::FlowBatch::draw(points, dim, 512, &mut rng);
        crate::lab::flow::flow_loss(net, &batch, None).unwrap().0
    }

    #[test]
    fn single_point_training_reaches_one_percent_of_initial_loss() {
        let x_star = vec![3.0, -2.0];
        let data = Dataset::new(x_star.clone(), 2).unwrap();
        let mut net = DenseNet::new(2, 0, &[64, 64, 64], 5);
        let initial = eval_loss(&net, &x_star, 2, 99);
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 256,
            seed: 5,
            ..Default::default()
        };
        train_net(&mut net, &data, &cfg).unwrap();
        let trained = eval_loss(&net, &x_star, 2, 99);
        assert!(
            trained < 0.01 * initial,
            "loss {trained} vs initial {initial}"
        );
    }

    #[test]
    fn single_point_sampling_concentrates_on_the_datapoint() {
        // the analytic flow for a one-point dataset carries every ε to x*
        // along a straight line; the trained field must do the same
        let x_star = vec![1.5, -1.0];
        let data = Dataset::new(x_star.clone(), 2).unwrap();
        let mut net = DenseNet::new(2, 0, &[64, 64, 64], 5);
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 256,
            seed: 5,
            ..Default::default()
        };
        train_net(&mut net, &data, &cfg).unwrap();

        let samples = sample_flow(&net, None, 256, 64, None, 9);
        let norm = 2.0f64.sqrt();
        let close = samples
            .chunks(2)
            .filter(|s| {
                let dist = s
                    .iter()
                    .zip(&x_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    / norm;
                dist < 0.05
            })
            .count();
        assert!(close >= 243, "{close}/256 samples within tolerance");
    }

    #[test]
    fn full_dropout_equals_zero_conditions() {
        let points = vec![0.1, 0.9, -0.6, 0.3];
        let conds = vec![1.0, -1.0, 0.5, 0.25];
        let data =
            Dataset::with_conditions(points.clone(), 2, conds, 2).unwrap();
        let zero_data =
            Dataset::with_conditions(points, 2, vec![0.0; 4], 2).unwrap();
        let cfg = TrainConfig {
            steps: 30,
            cond_dropout_p: 1.0,
            ..Default::default()
        };
        let mut a = DenseNet::new(2, 2, &[8], 3);
        let mut b = a.clone();
        train_net(&mut a, &data, &cfg).unwrap();
        train_net(&mut b, &zero_data, &cfg).unwrap();
        assert_eq!(a.layers[0].weights, b.layers[0].weights);
    }

    #[test]
    fn lora_training_moves_only_adapter() {
        let data = Dataset::new(vec![0.5, -0.5, 0.2, 0.7], 2).unwrap();
        let net = DenseNet::new(2, 0, &[16], 7);
        let frozen = net.clone();
        let mut adapter = LoraAdapter::new(&net, 4, 8);
        let cfg = TrainConfig {
            steps: 200,
            ..Default::default()
        };
        let report = train_lora(&net, &mut adapter, &data, &cfg).unwrap();
        assert_eq!(net.layers[0].weights, frozen.layers[0].weights);
        assert!(report.final_loss < report.loss_trace[0]);
        assert!(adapter.layers.iter().any(|l| l.b.iter().any(|&b| b != 0.0)));
    }

    #[test]
    fn divergence_aborts_with_step_index() {
        // identity activations and an absurd learning rate blow up fast
        let data = Dataset::new(vec![5.0, -5.0, 4.0, -4.0], 2).unwrap();
        let mut net = DenseNet::new(2, 0, &[8], 11);
        for layer in &mut net.layers {
            layer.activation = Activation::Identity;
        }
        let cfg = TrainConfig {
            steps: 5000,
            lr: 1e6,
            ..Default::default()
        };
        match train_net(&mut net, &data, &cfg) {
            Err(LabError::NonFiniteLoss { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

