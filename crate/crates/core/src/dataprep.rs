//! Dataset preparation: dynamic-range-filtered crop sampling with an
//! area-proportional attempt budget, median-luminance normalization, and
//! exposure-adjusted sRGB rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::LinearImage;
use crate::metrics::effective_dr;
use crate::xfer::{srgb_encode, EncodedImage, TransferTag};

/// Minimum dynamic range (stops) a crop must reach to be kept.
pub const DEFAULT_DR_THRESHOLD: f64 = 5.0;
/// Attempts per `size²` of image area.
pub const DEFAULT_SAMPLE_RATE: usize = 8;
/// Median-luminance target for display-study stimuli, cd/m².
pub const MEDIAN_TARGET_STUDY: f32 = 8.0;
/// Median-luminance target for web export, cd/m².
pub const MEDIAN_TARGET_WEB: f32 = 0.5;
/// At EV 0 the median luminance renders as 18% gray.
pub const ANCHOR_GRAY: f64 = 0.18;

#[derive(Debug, Error)]
pub enum DataPrepError {
    #[error("median luminance is zero; normalization scale is undefined")]
    ZeroMedian,
    #[error("EV anchor must be positive (got {0})")]
    NonPositiveAnchor(f64),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

/// One accepted crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub source_id: String,
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub dr_stops: f64,
}

/// Reproducible record of a crop-sampling run over a set of sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub threshold: f64,
    pub peak: f64,
    pub seed: u64,
    pub entries: Vec<CropSpec>,
}

/// Result of sampling one image, including sizes skipped because the image
/// was too small.
#[derive(Debug, Clone, Default)]
pub struct SampleOutcome {
    pub specs: Vec<CropSpec>,
    pub attempts: usize,
    pub skipped_sizes: Vec<usize>,
}

/// Attempt budget for one crop size: `rate × ⌊area / size²⌋`.
pub fn attempt_budget(width: usize, height: usize, size: usize, rate: usize) -> usize {
    rate * (width * height / (size * size))
}

/// Draws uniformly random crop candidates and keeps those whose effective
/// dynamic range reaches `dr_threshold`.
///
/// The per-image RNG stream is derived from the master seed and the source
/// id, so sampling is reproducible and independent of image processing
/// order.
pub fn sample_crops(
    img: &LinearImage,
    source_id: &str,
    sizes: &[usize],
    dr_threshold: f64,
    rate: usize,
    seed: u64,
) -> SampleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(source_id.as_bytes()));
    let mut outcome = SampleOutcome::default();
    for &size in sizes {
        if size == 0 || size > img.width() || size > img.height() {
            outcome.skipped_sizes.push(size);
            continue;
        }
        let budget = attempt_budget(img.width(), img.height(), size, rate);
        for _ in 0..budget {
            outcome.attempts += 1;
            let x = rng.random_range(0..=img.width() - size);
            let y = rng.random_range(0..=img.height() - size);
            let crop = img.crop(x, y, size, size).expect("candidate is in bounds");
            let dr = effective_dr(&crop).dr_stops;
            if dr >= dr_threshold {
                outcome.specs.push(CropSpec {
                    source_id: source_id.to_string(),
                    x,
                    y,
                    size,
                    dr_stops: dr,
                });
            }
        }
    }
    outcome
}

/// Samples every source and assembles a manifest with entries sorted by
/// `(source_id, x, y, size)`.
pub fn build_manifest(
    sources: &[(String, LinearImage)],
    sizes: &[usize],
    dr_threshold: f64,
    rate: usize,
    peak: f64,
    seed: u64,
) -> Manifest {
    let mut entries = Vec::new();
    for (id, img) in sources {
        entries.extend(sample_crops(img, id, sizes, dr_threshold, rate, seed).specs);
    }
    entries.sort_by(|a, b| {
        (&a.source_id, a.x, a.y, a.size).cmp(&(&b.source_id, b.x, b.y, b.size))
    });
    Manifest {
        threshold: dr_threshold,
        peak,
        seed,
        entries,
    }
}

/// Uniformly scales the image so its median luminance equals `target_median`.
pub fn normalize_median(
    img: &LinearImage,
    target_median: f32,
) -> Result<LinearImage, DataPrepError> {
    let median = img.luminance().percentile(50.0);
    if median <= 0.0 {
        return Err(DataPrepError::ZeroMedian);
    }
    let scale = target_median as f64 / median;
    Ok(img.map(|v| (v as f64 * scale) as f32)?)
}

/// Anchor that maps the image median to 18% gray at EV 0.
pub fn default_ev_anchor(img: &LinearImage) -> f64 {
    img.luminance().percentile(50.0) / ANCHOR_GRAY
}

/// Renders an exposure-adjusted sRGB view: `img × 2^ev / anchor`, clipped to
/// `[0,1]`, then sRGB-encoded. With `anchor = None` the default 18%-gray
/// median anchor is used.
pub fn render_ev(
    img: &LinearImage,
    ev: f64,
    anchor: Option<f64>,
) -> Result<EncodedImage, DataPrepError> {
    let anchor = anchor.unwrap_or_else(|| default_ev_anchor(img));
    if !(anchor > 0.0) || !anchor.is_finite() {
        return Err(DataPrepError::NonPositiveAnchor(anchor));
    }
    let scale = ev.exp2() / anchor;
    let data: Vec<f32> = img
        .data()
        .iter()
        .map(|&v| srgb_encode((v as f64 * scale).clamp(0.0, 1.0)) as f32)
        .collect();
    Ok(EncodedImage::new(
        img.width(),
        img.height(),
        data,
        TransferTag::Srgb,
        None,
    )
    .expect("sRGB output is in [0,1]"))
}

/// 64-bit FNV-1a over the source id; gives each image a stable RNG stream.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
