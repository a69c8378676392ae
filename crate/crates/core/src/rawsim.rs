//! Simulated RAW capture path: RGGB mosaicking, bilinear demosaicking,
//! virtual exposure clipping, Poisson-Gaussian sensor noise, and the
//! synthetic radial-gradient HDR targets used to probe reconstruction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{LinearImage, LUMA_WEIGHTS};

/// Default virtual-exposure clip level in cd/m².
pub const DEFAULT_CLIP_LEVEL: f32 = 100.0;

#[derive(Debug, Error)]
pub enum RawSimError {
    #[error("Bayer operations need even dimensions (got {0}x{1})")]
    OddDimensions(usize, usize),
    #[error("data length {got} does not match {width}x{height}")]
    DataLength { got: usize, width: usize, height: usize },
    #[error("photon gain must be positive (got {0})")]
    NonPositiveGain(f64),
    #[error("read noise must be non-negative (got {0})")]
    NegativeReadSigma(f64),
    #[error("clip level must be positive (got {0})")]
    NonPositiveClip(f32),
    #[error("gradient needs 0 < floor < peak (got floor {floor}, peak {peak})")]
    BadGradientRange { floor: f64, peak: f64 },
    #[error("gradient size must be at least 2 (got {0})")]
    GradientTooSmall(usize),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Io(#[from] crate::hdrio::HdrIoError),
}

/// Color-filter-array layout. Only RGGB is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfaPattern {
    Rggb,
}

/// A single-channel linear sensor frame under a color filter array.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerFrame {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pub pattern: CfaPattern,
}

/// Which channel an RGGB site carries at `(x, y)`.
fn rggb_channel(x: usize, y: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0, // R
        (1, 1) => 2, // B
        _ => 1,      // G
    }
}

impl BayerFrame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RawSimError> {
        if width % 2 != 0 || height % 2 != 0 || width == 0 || height == 0 {
            return Err(RawSimError::OddDimensions(width, height));
        }
        if data.len() != width * height {
            return Err(RawSimError::DataLength {
                got: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
            pattern: CfaPattern::Rggb,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Parameters of the Poisson-Gaussian sensor noise model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Electrons per cd/m²-equivalent unit; controls shot-noise strength.
    pub photon_gain: f64,
    /// Additive read-noise standard deviation in cd/m²-equivalent units.
    pub read_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        // SNR ≈ 20 dB at 1 cd/m²-equivalent
        Self {
            photon_gain: 400.0,
            read_sigma: 0.02,
            seed: 0,
        }
    }
}

/// Subsamples an RGB image onto an RGGB mosaic.
pub fn mosaic(img: &LinearImage) -> Result<BayerFrame, RawSimError> {
    if img.width() % 2 != 0 || img.height() % 2 != 0 {
        return Err(RawSimError::OddDimensions(img.width(), img.height()));
    }
    let mut data = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            data.push(img.pixel(x, y)[rggb_channel(x, y)]);
        }
    }
    BayerFrame::new(img.width(), img.height(), data)
}

/// Fills the missing channels of an RGGB frame by averaging the available
/// same-channel neighbors (4-connected for green, diagonal or axial pairs
/// for red/blue); border sites use whichever neighbors are in bounds.
pub fn demosaic_bilinear(frame: &BayerFrame) -> LinearImage {
    let (w, h) = (frame.width, frame.height);
    let mut data = vec![0.0f32; w * h * 3];

    let mean_at = |offsets: &[(isize, isize)], x: usize, y: usize| -> f32 {
        let mut sum = 0.0f64;
        let mut count = 0u32;
        for &(dx, dy) in offsets {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                sum += frame.get(nx as usize, ny as usize) as f64;
                count += 1;
            }
        }
        (sum / count as f64) as f32
    };

    const AXIAL: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    const DIAGONAL: [(isize, isize); 4] = [(-1, -1), (1, -1), (-1, 1), (1, 1)];
    const HORIZONTAL: [(isize, isize); 2] = [(-1, 0), (1, 0)];
    const VERTICAL: [(isize, isize); 2] = [(0, -1), (0, 1)];

    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            let v = frame.get(x, y);
            match rggb_channel(x, y) {
                0 => {
                    // R site: green from axial, blue from diagonal neighbors
                    data[i] = v;
                    data[i + 1] = mean_at(&AXIAL, x, y);
                    data[i + 2] = mean_at(&DIAGONAL, x, y);
                }
                2 => {
                    data[i] = mean_at(&DIAGONAL, x, y);
                    data[i + 1] = mean_at(&AXIAL, x, y);
                    data[i + 2] = v;
                }
                _ => {
                    // G site: red and blue live on the two axes; which is
                    // which depends on the row parity
                    data[i + 1] = v;
                    if y % 2 == 0 {
                        data[i] = mean_at(&HORIZONTAL, x, y);
                        data[i + 2] = mean_at(&VERTICAL, x, y);
                    } else {
                        data[i] = mean_at(&VERTICAL, x, y);
                        data[i + 2] = mean_at(&HORIZONTAL, x, y);
                    }
                }
            }
        }
    }
    LinearImage::new(w, h, data).expect("demosaic preserves finite non-negative values")
}

/// Clips every channel at `clip_at`, simulating a short virtual exposure.
pub fn virtual_exposure(img: &LinearImage, clip_at: f32) -> Result<LinearImage, RawSimError> {
    if !(clip_at > 0.0) {
        return Err(RawSimError::NonPositiveClip(clip_at));
    }
    Ok(img.map(|v| v.min(clip_at))?)
}

/// Adds Poisson shot noise and Gaussian read noise to a sensor frame.
///
/// Each site draws `Poisson(value × photon_gain) / photon_gain` plus
/// `N(0, read_sigma²)`, clamped at the black level (zero). Rows use
/// independent RNG streams derived from the seed, so the result is
/// bit-reproducible regardless of row execution order.
pub fn add_noise(frame: &BayerFrame, p: &NoiseParams) -> Result<BayerFrame, RawSimError> {
    if !(p.photon_gain > 0.0) {
        return Err(RawSimError::NonPositiveGain(p.photon_gain));
    }
    if p.read_sigma < 0.0 || !p.read_sigma.is_finite() {
        return Err(RawSimError::NegativeReadSigma(p.read_sigma));
    }
    let read = if p.read_sigma > 0.0 {
        Some(Normal::new(0.0, p.read_sigma).expect("validated above"))
    } else {
        None
    };
    let w = frame.width;
    let mut data = vec![0.0f32; frame.data.len()];
    data.par_chunks_mut(w)
        .zip(frame.data.par_chunks(w))
        .enumerate()
        .for_each(|(row, (dst, src))| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(row as u64);
            for (d, &s) in dst.iter_mut().zip(src) {
                let mean = s as f64 * p.photon_gain;
                let photons = if mean > 0.0 {
                    Poisson::new(mean).expect("positive mean").sample(&mut rng)
                } else {
                    0.0
                };
                let mut v = photons / p.photon_gain;
                if let Some(n) = &read {
                    v += n.sample(&mut rng);
                }
                *d = v.max(0.0) as f32;
            }
        });
    BayerFrame::new(frame.width, frame.height, data)
}

/// Which channels carry the gradient's luminance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chroma {
    White,
    Yellow,
    Green,
    Red,
}

impl Chroma {
    /// Unit-luminance RGB carrier for this chroma.
    fn carrier(&self) -> [f64; 3] {
        let mask: [f64; 3] = match self {
            Chroma::White => [1.0, 1.0, 1.0],
            Chroma::Yellow => [1.0, 1.0, 0.0],
            Chroma::Green => [0.0, 1.0, 0.0],
            Chroma::Red => [1.0, 0.0, 0.0],
        };
        let luma: f64 = mask
            .iter()
            .zip(LUMA_WEIGHTS)
            .map(|(m, w)| m * w)
            .sum();
        mask.map(|m| m / luma)
    }
}

impl std::str::FromStr for Chroma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "white" => Ok(Chroma::White),
            "yellow" => Ok(Chroma::Yellow),
            "green" => Ok(Chroma::Green),
            "red" => Ok(Chroma::Red),
            other => Err(format!("unknown chroma '{other}'")),
        }
    }
}

/// Synthesizes a square HDR target whose luminance falls off
/// log-linearly from `peak` at the center to `floor` at the corners.
///
/// The profile is `L(r) = exp(ln(peak) + (ln(floor) − ln(peak)) · r/r_max)`
/// with `r` the distance to the image center and `r_max` the center-to-corner
/// distance; channels are scaled so the BT.709 luminance matches the target.
pub fn synth_radial_gradient(
    size: usize,
    peak: f64,
    floor: f64,
    chroma: Chroma,
) -> Result<LinearImage, RawSimError> {
    if size < 2 {
        return Err(RawSimError::GradientTooSmall(size));
    }
    if !(floor > 0.0) || !(peak > floor) {
        return Err(RawSimError::BadGradientRange { floor, peak });
    }
    let carrier = chroma.carrier();
    let center = (size as f64 - 1.0) / 2.0;
    let r_max = (2.0f64).sqrt() * center;
    let ln_peak = peak.ln();
    let ln_span = floor.ln() - ln_peak;
    let img = LinearImage::from_fn(size, size, |x, y| {
        let dx = x as f64 - center;
        let dy = y as f64 - center;
        let r = (dx * dx + dy * dy).sqrt();
        let luminance = (ln_peak + ln_span * r / r_max).exp();
        carrier.map(|c| (c * luminance) as f32)
    })?;
    Ok(img)
}

/// Sidecar metadata for Bayer frames serialized as single-channel PFM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayerSidecar {
    pub pattern: CfaPattern,
    pub width: usize,
    pub height: usize,
}

/// Serializes a frame as `(grayscale PFM bytes, sidecar JSON)`.
pub fn bayer_to_pfm(frame: &BayerFrame) -> (Vec<u8>, String) {
    let pfm = crate::hdrio::write_pfm_gray(&frame.data, frame.width, frame.height);
    let sidecar = BayerSidecar {
        pattern: frame.pattern,
        width: frame.width,
        height: frame.height,
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    (pfm, json)
}

/// Reads a frame back from grayscale PFM, cross-checking the sidecar when
/// present.
pub fn bayer_from_pfm(
    pfm: &[u8],
    sidecar_json: Option<&str>,
) -> Result<BayerFrame, RawSimError> {
    let (data, width, height) = crate::hdrio::read_pfm_gray(pfm)?;
    if let Some(json) = sidecar_json {
        if let Ok(sidecar) = serde_json::from_str::<BayerSidecar>(json) {
            if sidecar.width != width || sidecar.height != height {
                return Err(RawSimError::DataLength {
                    got: data.len(),
                    width: sidecar.width,
                    height: sidecar.height,
                });
            }
        }
    }
    BayerFrame::new(width, height, data)
}
