//! Frozen-autoencoder encoding-ordering experiment.
//!
//! A small autoencoder is trained on sRGB-encoded LDR patches only, then
//! frozen and asked to reconstruct held-out patches under three encodings of
//! the same HDR content: sRGB LDR, max-normalized linear, and PU21. The
//! interesting quantity is the ordering of the three reconstruction errors.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rawsim::{synth_radial_gradient, Chroma};
use crate::xfer::{pu21_encode, srgb_encode, Pu21Params};

/// Luminance ceiling of the simulated LDR capture, cd/m².
const LDR_CLIP: f64 = 100.0;
/// Patch luminance range, cd/m².
const PATCH_FLOOR: f64 = 0.005;
const PATCH_PEAK: f64 = 4000.0;

const TRAIN_STEPS: usize = 3000;
const TRAIN_LR: f64 = 0.05;
const TRAIN_BATCH: usize = 32;
const TRAIN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AeConfig {
    /// Side length of the square RGB patches.
    pub patch_size: usize,
    /// Bottleneck width; must stay below `3 · patch_size²`.
    pub hidden_dim: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            hidden_dim: 64,
            n_train: 2048,
            n_eval: 256,
            seed: 0,
        }
    }
}

/// Mean per-element squared reconstruction error under each input encoding.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AeReport {
    pub err_ldr: f64,
    pub err_linear: f64,
    pub err_pu21: f64,
}

/// One-hidden-layer tanh autoencoder with an identity output.
struct Autoencoder {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    input_dim: usize,
    hidden_dim: usize,
}

impl Autoencoder {
    fn new(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let n1 = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 1.0 / (hidden_dim as f64).sqrt()).expect("positive std");
        Self {
            w1: (0..hidden_dim * input_dim).map(|_| n1.sample(rng)).collect(),
            b1: vec![0.0; hidden_dim],
            w2: (0..input_dim * hidden_dim).map(|_| n2.sample(rng)).collect(),
            b2: vec![0.0; input_dim],
            input_dim,
            hidden_dim,
        }
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden: Vec<f64> = (0..self.hidden_dim)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h]).tanh()
            })
            .collect();
        let output: Vec<f64> = (0..self.input_dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
                row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + self.b2[o]
            })
            .collect();
        (hidden, output)
    }

    /// Mean per-element squared error of reconstructing `x`.
    fn reconstruction_error(&self, x: &[f64]) -> f64 {
        let (_, output) = self.forward(x);
        output
            .iter()
            .zip(x)
            .map(|(y, v)| (y - v) * (y - v))
            .sum::<f64>()
            / self.input_dim as f64
    }
}

/// Momentum buffers matching the autoencoder parameters.
struct Velocity {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn train_autoencoder(ae: &mut Autoencoder, patches: &[Vec<f64>], rng: &mut ChaCha8Rng) {
    let mut vel = Velocity {
        w1: vec![0.0; ae.w1.len()],
        b1: vec![0.0; ae.b1.len()],
        w2: vec![0.0; ae.w2.len()],
        b2: vec![0.0; ae.b2.len()],
    };
    let d = ae.input_dim as f64;
    for _ in 0..TRAIN_STEPS {
        let mut gw1 = vec![0.0; ae.w1.len()];
        let mut gb1 = vec![0.0; ae.b1.len()];
        let mut gw2 = vec![0.0; ae.w2.len()];
        let mut gb2 = vec![0.0; ae.b2.len()];
        for _ in 0..TRAIN_BATCH {
            let x = patches.choose(rng).expect("non-empty training set");
            let (hidden, output) = ae.forward(x);
            // d(mean (y−x)²)/dy, averaged over the batch
            let delta_y: Vec<f64> = output
                .iter()
                .zip(x)
                .map(|(y, v)| 2.0 * (y - v) / (d * TRAIN_BATCH as f64))
                .collect();
            let mut delta_h = vec![0.0; ae.hidden_dim];
            for o in 0..ae.input_dim {
                let dy = delta_y[o];
                gb2[o] += dy;
                let w_row = &ae.w2[o * ae.hidden_dim..(o + 1) * ae.hidden_dim];
                let g_row = &mut gw2[o * ae.hidden_dim..(o + 1) * ae.hidden_dim];
                for h in 0..ae.hidden_dim {
                    g_row[h] += dy * hidden[h];
                    delta_h[h] += dy * w_row[h];
                }
            }
            for h in 0..ae.hidden_dim {
                let dh = delta_h[h] * (1.0 - hidden[h] * hidden[h]);
                gb1[h] += dh;
                let g_row = &mut gw1[h * ae.input_dim..(h + 1) * ae.input_dim];
                for (g, v) in g_row.iter_mut().zip(x) {
                    *g += dh * v;
                }
            }
        }
        let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = TRAIN_MOMENTUM * *v - TRAIN_LR * g;
                *p += *v;
            }
        };
        update(&mut ae.w1, &gw1, &mut vel.w1);
        update(&mut ae.b1, &gb1, &mut vel.b1);
        update(&mut ae.w2, &gw2, &mut vel.w2);
        update(&mut ae.b2, &gb2, &mut vel.b2);
    }
}

/// Procedural HDR patch in absolute cd/m², `patch_size² × 3` row-major:
/// crops of radial gradients, two-level plateaus, or smoothed log-noise,
/// spanning the full `[0.005, 4000]` range across the population.
pub(crate) fn generate_hdr_patch(patch_size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        (rng.random_range(lo.ln()..hi.ln())).exp()
    };
    match rng.random_range(0..3u32) {
        0 => {
            // crop of a synthetic radial gradient
            let chroma = *[Chroma::White, Chroma::Yellow, Chroma::Green, Chroma::Red]
                .choose(rng)
                .expect("non-empty");
            let peak = log_uniform(rng, 500.0, PATCH_PEAK);
            let floor = log_uniform(rng, PATCH_FLOOR, 0.5);
            let source = 3 * patch_size;
            let grad = synth_radial_gradient(source, peak, floor, chroma)
                .expect("valid gradient parameters");
            let x0 = rng.random_range(0..=source - patch_size);
            let y0 = rng.random_range(0..=source - patch_size);
            let crop = grad.crop(x0, y0, patch_size, patch_size).expect("in bounds");
            crop.data().iter().map(|&v| v as f64).collect()
        }
        1 => {
            // two plateaus split by a random oriented line
            let lo = log_uniform(rng, PATCH_FLOOR, 20.0);
            let hi = log_uniform(rng, 150.0, PATCH_PEAK);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (nx, ny) = (angle.cos(), angle.sin());
            let offset = rng.random_range(-0.5..0.5) * patch_size as f64;
            let mut patch = Vec::with_capacity(patch_size * patch_size * 3);
            for y in 0..patch_size {
                for x in 0..patch_size {
                    let side = nx * (x as f64 - patch_size as f64 / 2.0)
                        + ny * (y as f64 - patch_size as f64 / 2.0)
                        - offset;
                    let level = if side > 0.0 { hi } else { lo };
                    patch.extend_from_slice(&[level, level, level]);
                }
            }
            patch
        }
        _ => {
            // smoothed log-uniform noise
            let n = patch_size * patch_size;
            let mut log_luma: Vec<f64> = (0..n)
                .map(|_| rng.random_range(PATCH_FLOOR.ln()..PATCH_PEAK.ln()))
                .collect();
            for _ in 0..2 {
                let mut smoothed = vec![0.0; n];
                for y in 0..patch_size {
                    for x in 0..patch_size {
                        let mut sum = 0.0;
                        let mut count = 0.0;
                        for dy in -1i32..=1 {
                            for dx in -1i32..=1 {
                                let sx = x as i32 + dx;
                                let sy = y as i32 + dy;
                                if sx >= 0
                                    && sy >= 0
                                    && (sx as usize) < patch_size
                                    && (sy as usize) < patch_size
                                {
                                    sum += log_luma[sy as usize * patch_size + sx as usize];
                                    count += 1.0;
                                }
                            }
                        }
                        smoothed[y * patch_size + x] = sum / count;
                    }
                }
                log_luma = smoothed;
            }
            log_luma
                .iter()
                .flat_map(|&l| {
                    let v = l.exp();
                    [v, v, v]
                })
                .collect()
        }
    }
}

fn encode_ldr(patch: &[f64]) -> Vec<f64> {
    patch
        .iter()
        .map(|&v| srgb_encode(v.min(LDR_CLIP) / LDR_CLIP))
        .collect()
}

fn encode_pu21(patch: &[f64], p: &Pu21Params) -> Vec<f64> {
    patch
        .iter()
        .map(|&v| pu21_encode(v, p).expect("finite patch values"))
        .collect()
}

fn encode_linear_normalized(patch: &[f64]) -> Vec<f64> {
    let max = patch.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return patch.to_vec();
    }
    patch.iter().map(|&v| v / max).collect()
}

/// Trains the autoencoder on sRGB LDR patches, freezes it, and reports its
/// mean reconstruction error on held-out patches under the three encodings.
pub fn autoencoder_ordering_experiment(cfg: &AeConfig) -> AeReport {
    assert!(cfg.patch_size >= 2, "patch_size must be at least 2");
    let input_dim = cfg.patch_size * cfg.patch_size * 3;
    assert!(
        cfg.hidden_dim > 0 && cfg.hidden_dim < input_dim,
        "hidden_dim must be a bottleneck below {input_dim}"
    );
    assert!(cfg.n_train > 0 && cfg.n_eval > 0, "need patches");

    let mut patch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    patch_rng.set_stream(1);
    let train_hdr: Vec<Vec<f64>> = (0..cfg.n_train)
        .map(|_| generate_hdr_patch(cfg.patch_size, &mut patch_rng))
        .collect();
    let eval_hdr: Vec<Vec<f64>> = (0..cfg.n_eval)
        .map(|_| generate_hdr_patch(cfg.patch_size, &mut patch_rng))
        .collect();

    let train_ldr: Vec<Vec<f64>> = train_hdr.iter().map(|p| encode_ldr(p)).collect();

    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(2);
    let mut ae = Autoencoder::new(input_dim, cfg.hidden_dim, &mut train_rng);
    train_autoencoder(&mut ae, &train_ldr, &mut train_rng);

    // frozen from here on
    let p = Pu21Params::default();
    let mean_err = |encoded: Vec<Vec<f64>>| -> f64 {
        encoded
            .iter()
            .map(|x| ae.reconstruction_error(x))
            .sum::<f64>()
            / encoded.len() as f64
    };
    AeReport {
        err_ldr: mean_err(eval_hdr.iter().map(|p| encode_ldr(p)).collect()),
        err_linear: mean_err(eval_hdr.iter().map(|p| encode_linear_normalized(p)).collect()),
        err_pu21: mean_err(eval_hdr.iter().map(|x| encode_pu21(x, &p)).collect()),
    }
}
