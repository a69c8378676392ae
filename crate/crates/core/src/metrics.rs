//! Image metrics: effective dynamic range in exposure stops and a
//! PU-encoded PSNR as a scalar fidelity proxy.

use serde::Serialize;
use thiserror::Error;

use crate::image::LinearImage;
use crate::xfer::{pu21_encode, Pu21Params};

/// Luminance floor applied to the low percentile before the log ratio; the
/// PU21 domain floor. Without it an all-black region would make the dynamic
/// range infinite.
pub const LUMINANCE_FLOOR: f64 = 0.005;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

/// Effective dynamic range of an image: the log2 ratio between high and low
/// percentiles of Gaussian-smoothed luminance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DrReport {
    /// Dynamic range in stops: `log2(l_high / l_low)`.
    pub dr_stops: f64,
    /// Low percentile of smoothed luminance (cd/m²), floored at
    /// [`LUMINANCE_FLOOR`].
    pub l_low: f64,
    /// High percentile of smoothed luminance (cd/m²).
    pub l_high: f64,
    /// Smoothing sigma in pixels.
    pub sigma: f64,
    /// Set when the image carried no usable luminance (all zero).
    pub degenerate: bool,
}

/// Computes effective dynamic range with explicit smoothing and percentile
/// parameters. See [`effective_dr`] for the defaults.
pub fn effective_dr_with(img: &LinearImage, sigma: f64, p_low: f64, p_high: f64) -> DrReport {
    let luma = img.luminance();
    let smoothed = luma
        .gaussian_blur(sigma as f32)
        .expect("sigma is validated positive by callers");
    let raw_low = smoothed.percentile(p_low);
    let raw_high = smoothed.percentile(p_high);
    if raw_high <= 0.0 {
        return DrReport {
            dr_stops: 0.0,
            l_low: LUMINANCE_FLOOR,
            l_high: LUMINANCE_FLOOR,
            sigma,
            degenerate: true,
        };
    }
    let l_low = raw_low.max(LUMINANCE_FLOOR);
    let l_high = raw_high.max(l_low);
    DrReport {
        dr_stops: (l_high / l_low).log2(),
        l_low,
        l_high,
        sigma,
        degenerate: false,
    }
}

/// Effective dynamic range with the standard parameters: σ = 3 pixels and
/// the `[0.5, 99.5]` percentile range.
pub fn effective_dr(img: &LinearImage) -> DrReport {
    effective_dr_with(img, 3.0, 0.5, 99.5)
}

/// PSNR between two images after PU21 encoding, peak 1.0, over all channels.
/// Identical inputs return `f64::INFINITY` ("exact").
pub fn pu_psnr(a: &LinearImage, b: &LinearImage) -> Result<f64, MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let p = Pu21Params::default();
    let mut sum = 0.0f64;
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        let ca = pu21_encode(va as f64, &p).expect("finite by image invariant");
        let cb = pu21_encode(vb as f64, &p).expect("finite by image invariant");
        let d = ca - cb;
        sum += d * d;
    }
    let mse = sum / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}
