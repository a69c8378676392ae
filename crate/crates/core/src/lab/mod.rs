//! Desk-scale adaptation laboratory: a fixed-architecture dense network
//! trained with the flow-matching objective, optional low-rank adapters,
//! condition concatenation with dropout, an Euler flow sampler, and a
//! frozen-autoencoder experiment comparing HDR encodings.

mod ae;
mod flow;
mod lora;
mod net;
mod train;

pub use ae::{autoencoder_ordering_experiment, AeConfig, AeReport};
pub use flow::{
    flow_loss, flow_loss_lora, integrate, sample_flow, FlowBatch, LayerGrads, LoraGrads,
    LoraLayerGrads, NetGrads,
};
pub use lora::{LoraAdapter, LoraLayer, LORA_RANK_PRESETS};
pub use net::{Activation, DenseNet, Layer};
pub use train::{train_lora, train_net, Dataset, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Built-in synthetic datasets for the flow lab: a 2-D Gaussian mixture
/// (`"mixture2d"`) or 48-dimensional PU21-encoded 4×4×3 HDR patches
/// (`"patches48"`).
pub fn synthetic_dataset(kind: &str, n: usize, seed: u64) -> Result<Dataset, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xda7a);
    match kind {
        "mixture2d" => {
            let centers = [[1.2, 1.2], [-1.2, 1.2], [-1.2, -1.2], [1.2, -1.2]];
            let spread = Normal::new(0.0, 0.15).expect("positive std");
            let mut points = Vec::with_capacity(n * 2);
            for _ in 0..n {
                let c = centers[rng.random_range(0..centers.len())];
                points.push(c[0] + spread.sample(&mut rng));
                points.push(c[1] + spread.sample(&mut rng));
            }
            Dataset::new(points, 2).map_err(|e| e.to_string())
        }
        "patches48" => {
            let p = crate::xfer::Pu21Params::default();
            let mut points = Vec::with_capacity(n * 48);
            for _ in 0..n {
                let patch = ae::generate_hdr_patch(4, &mut rng);
                for v in patch {
                    points.push(crate::xfer::pu21_encode(v, &p).expect("finite patch"));
                }
            }
            Dataset::new(points, 48).map_err(|e| e.to_string())
        }
        other => Err(format!(
            "unknown dataset '{other}' (expected mixture2d or patches48)"
        )),
    }
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("bad config: {0}")]
    BadConfig(String),
}

/// Everything needed to reload and run a trained model: base network,
/// optional adapter, the exact training config, and the loss trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub net: DenseNet,
    pub adapter: Option<LoraAdapter>,
    pub config: TrainConfig,
    pub loss_trace: Vec<f64>,
}
