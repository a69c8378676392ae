//! Transfer functions between absolute linear light and display-encoded code
//! values: the PU21 log-quadratic, SMPTE ST 2084 (PQ), piecewise sRGB, and a
//! plain max-normalization.
//!
//! Scalar functions run in `f64`; the per-pixel wrappers clamp out-of-domain
//! luminances and report how many samples were clipped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::LinearImage;

#[derive(Debug, Error)]
pub enum XferError {
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("negative code value {0}")]
    NegativeCode(f64),
    #[error("encoded image is tagged LinearNormalized but carries no normalization peak")]
    MissingNormPeak,
    #[error("code value {value} at index {index} outside [0,1]")]
    CodeOutOfRange { index: usize, value: f32 },
    #[error("data length {got} does not match {width}x{height}x3")]
    DataLength { got: usize, width: usize, height: usize },
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
}

/// Coefficients of the PU21 log-quadratic and its valid luminance domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pu21Params {
    pub a: f64,
    pub b: f64,
    /// log2 of the minimum representable luminance.
    pub l_min_log2: f64,
    /// Maximum representable luminance in cd/m².
    pub l_max: f64,
}

impl Default for Pu21Params {
    fn default() -> Self {
        Self {
            a: 0.001908,
            b: 0.0078,
            l_min_log2: (0.005f64).log2(),
            l_max: 10000.0,
        }
    }
}

impl Pu21Params {
    /// Minimum representable luminance in cd/m².
    pub fn l_min(&self) -> f64 {
        self.l_min_log2.exp2()
    }
}

// SMPTE ST 2084 constants.
const PQ_M1: f64 = 2610.0 / 16384.0;
const PQ_M2: f64 = 2523.0 / 4096.0 * 128.0;
const PQ_C1: f64 = 3424.0 / 4096.0;
const PQ_C2: f64 = 2413.0 / 4096.0 * 32.0;
const PQ_C3: f64 = 2392.0 / 4096.0 * 32.0;
/// PQ encodes luminance normalized by 10,000 cd/m².
pub const PQ_L_MAX: f64 = 10000.0;

/// Maps absolute luminance to a perceptually uniform code value via the PU21
/// log-quadratic. Inputs outside the valid domain are clamped to it.
pub fn pu21_encode(l: f64, p: &Pu21Params) -> Result<f64, XferError> {
    if !l.is_finite() {
        return Err(XferError::NonFinite(l));
    }
    Ok(pu21_encode_clamped(l, p))
}

fn pu21_encode_clamped(l: f64, p: &Pu21Params) -> f64 {
    let l = l.clamp(p.l_min(), p.l_max);
    let d = l.log2() - p.l_min_log2;
    p.a * d * d + p.b * d
}

/// Exact functional inverse of [`pu21_encode`] on the valid domain.
pub fn pu21_decode(v: f64, p: &Pu21Params) -> Result<f64, XferError> {
    if !v.is_finite() {
        return Err(XferError::NonFinite(v));
    }
    if v < 0.0 {
        return Err(XferError::NegativeCode(v));
    }
    Ok(pu21_decode_unchecked(v, p))
}

fn pu21_decode_unchecked(v: f64, p: &Pu21Params) -> f64 {
    let e = (2.0 * p.a * p.l_min_log2 - p.b + (p.b * p.b + 4.0 * p.a * v).sqrt()) / (2.0 * p.a);
    e.exp2()
}

/// SMPTE ST 2084 inverse EOTF: absolute luminance (cd/m²) to PQ signal.
/// Inputs are clamped to `[0, 10000]`.
pub fn pq_encode(l: f64) -> Result<f64, XferError> {
    if !l.is_finite() {
        return Err(XferError::NonFinite(l));
    }
    Ok(pq_encode_clamped(l))
}

fn pq_encode_clamped(l: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    let y = (l / PQ_L_MAX).min(1.0);
    let yp = y.powf(PQ_M1);
    ((PQ_C1 + PQ_C2 * yp) / (1.0 + PQ_C3 * yp)).powf(PQ_M2)
}

/// SMPTE ST 2084 EOTF: PQ signal to absolute luminance (cd/m²).
pub fn pq_decode(v: f64) -> Result<f64, XferError> {
    if !v.is_finite() {
        return Err(XferError::NonFinite(v));
    }
    if v < 0.0 {
        return Err(XferError::NegativeCode(v));
    }
    Ok(pq_decode_unchecked(v))
}

fn pq_decode_unchecked(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let vp = v.min(1.0).powf(1.0 / PQ_M2);
    let num = (vp - PQ_C1).max(0.0);
    let den = PQ_C2 - PQ_C3 * vp;
    PQ_L_MAX * (num / den).powf(1.0 / PQ_M1)
}

/// Piecewise sRGB OETF on relative luminance in `[0,1]` (clamped otherwise).
pub fn srgb_encode(l: f64) -> f64 {
    let l = l.clamp(0.0, 1.0);
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

/// Piecewise sRGB EOTF, the inverse of [`srgb_encode`].
pub fn srgb_decode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Which transfer function an [`EncodedImage`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferTag {
    Pu21,
    Pq,
    Srgb,
    LinearNormalized,
}

impl TransferTag {
    pub fn name(&self) -> &'static str {
        match self {
            TransferTag::Pu21 => "pu21",
            TransferTag::Pq => "pq",
            TransferTag::Srgb => "srgb",
            TransferTag::LinearNormalized => "linear-normalized",
        }
    }
}

impl std::str::FromStr for TransferTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pu21" => Ok(TransferTag::Pu21),
            "pq" => Ok(TransferTag::Pq),
            "srgb" => Ok(TransferTag::Srgb),
            "linear" | "linear-normalized" => Ok(TransferTag::LinearNormalized),
            other => Err(format!("unknown transfer function '{other}'")),
        }
    }
}

/// An `H×W×3` image of display-encoded code values in `[0,1]`, tagged with
/// the transfer function that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pub tag: TransferTag,
    /// Peak used by `LinearNormalized`; needed to invert that encoding.
    pub norm_peak: Option<f32>,
}

impl EncodedImage {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<f32>,
        tag: TransferTag,
        norm_peak: Option<f32>,
    ) -> Result<Self, XferError> {
        if width == 0 || height == 0 {
            return Err(XferError::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(XferError::DataLength {
                got: data.len(),
                width,
                height,
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(XferError::CodeOutOfRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            data,
            tag,
            norm_peak,
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

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// How many samples an image-level encode clamped to the valid domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClipStats {
    pub below: u64,
    pub above: u64,
}

impl ClipStats {
    pub fn total(&self) -> u64 {
        self.below + self.above
    }
}

/// Applies the tagged transfer channel-wise to every pixel, reporting how
/// many samples fell outside the transfer's domain and were clamped.
pub fn encode_image(
    img: &LinearImage,
    tag: TransferTag,
) -> Result<(EncodedImage, ClipStats), XferError> {
    let p = Pu21Params::default();
    let (lo, hi) = match tag {
        TransferTag::Pu21 => (p.l_min(), p.l_max),
        TransferTag::Pq => (0.0, PQ_L_MAX),
        TransferTag::Srgb => (0.0, 1.0),
        TransferTag::LinearNormalized => (0.0, f64::INFINITY),
    };
    let norm_peak = match tag {
        TransferTag::LinearNormalized => {
            Some(img.data().iter().fold(0.0f32, |m, &v| m.max(v)))
        }
        _ => None,
    };
    let inv_peak = match norm_peak {
        Some(peak) if peak > 0.0 => 1.0 / peak as f64,
        _ => 0.0,
    };
    // clip accounting happens at the buffer's f32 resolution so a sample
    // sitting exactly on the domain edge is not miscounted
    let lo32 = lo as f32;
    let hi32 = if hi.is_finite() { hi as f32 } else { f32::INFINITY };

    let rows: Vec<(Vec<f32>, ClipStats)> = img
        .data()
        .par_chunks(img.width() * 3)
        .map(|row| {
            let mut clips = ClipStats::default();
            let encoded = row
                .iter()
                .map(|&v| {
                    let l = v as f64;
                    if v < lo32 {
                        clips.below += 1;
                    } else if v > hi32 {
                        clips.above += 1;
                    }
                    let code = match tag {
                        TransferTag::Pu21 => pu21_encode_clamped(l, &p),
                        TransferTag::Pq => pq_encode_clamped(l),
                        TransferTag::Srgb => srgb_encode(l),
                        TransferTag::LinearNormalized => l * inv_peak,
                    };
                    code as f32
                })
                .collect();
            (encoded, clips)
        })
        .collect();

    let mut data = Vec::with_capacity(img.data().len());
    let mut clips = ClipStats::default();
    for (row, c) in rows {
        data.extend_from_slice(&row);
        clips.below += c.below;
        clips.above += c.above;
    }
    let encoded = EncodedImage::new(img.width(), img.height(), data, tag, norm_peak)?;
    Ok((encoded, clips))
}

/// Inverts the tagged transfer per pixel, recovering linear values.
pub fn decode_image(img: &EncodedImage) -> Result<LinearImage, XferError> {
    let p = Pu21Params::default();
    let scale = match img.tag {
        TransferTag::LinearNormalized => {
            Some(img.norm_peak.ok_or(XferError::MissingNormPeak)? as f64)
        }
        _ => None,
    };
    let data: Vec<f32> = img
        .data()
        .par_chunks(img.width() * 3)
        .flat_map_iter(|row| {
            row.iter().map(move |&v| {
                let code = v as f64;
                let linear = match img.tag {
                    TransferTag::Pu21 => pu21_decode_unchecked(code, &p),
                    TransferTag::Pq => pq_decode_unchecked(code),
                    TransferTag::Srgb => srgb_decode(code),
                    TransferTag::LinearNormalized => code * scale.unwrap_or(0.0),
                };
                linear as f32
            })
        })
        .collect();
    Ok(LinearImage::from_raw_unchecked(
        img.width(),
        img.height(),
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Frozen extended-precision evaluation of the PU21 log-quadratic at the
    /// domain ceiling (50-digit arithmetic, rounded to f64).
    const PU21_AT_CEILING: f64 = 0.9992193486103145;
    /// Frozen ST 2084 signal for 100 cd/m².
    const PQ_AT_100: f64 = 0.5080784215173949;

    fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        let (lo_l, hi_l) = (lo.ln(), hi.ln());
        (0..n).map(move |i| (lo_l + (hi_l - lo_l) * i as f64 / (n - 1) as f64).exp())
    }

    #[test]
    fn pu21_domain_floor_is_exactly_zero() {
        let p = Pu21Params::default();
        assert_eq!(pu21_encode(0.005, &p).unwrap(), 0.0);
    }

    #[test]
    fn pu21_ceiling_matches_frozen_value() {
        let p = Pu21Params::default();
        let v = pu21_encode(10000.0, &p).unwrap();
        assert!((v - PU21_AT_CEILING).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn pu21_strictly_monotone_on_log_grid() {
        let p = Pu21Params::default();
        let mut last = f64::NEG_INFINITY;
        for l in log_grid(0.005, 10000.0, 10_000) {
            let v = pu21_encode(l, &p).unwrap();
            assert!(v > last, "not increasing at {l}");
            last = v;
        }
    }

    #[test]
    fn pu21_roundtrip_on_log_grid() {
        let p = Pu21Params::default();
        for l in log_grid(0.005, 10000.0, 10_000) {
            let back = pu21_decode(pu21_encode(l, &p).unwrap(), &p).unwrap();
            assert_relative_eq!(back, l, max_relative = 1e-6);
        }
    }

    #[test]
    fn pu21_decode_of_zero_is_domain_floor() {
        let p = Pu21Params::default();
        assert_relative_eq!(pu21_decode(0.0, &p).unwrap(), 0.005, max_relative = 1e-12);
    }

    #[test]
    fn pu21_decode_of_ceiling_code() {
        let p = Pu21Params::default();
        let l = pu21_decode(PU21_AT_CEILING, &p).unwrap();
        assert_relative_eq!(l, 10000.0, max_relative = 1e-6);
    }

    #[test]
    fn pu21_clamps_out_of_domain() {
        let p = Pu21Params::default();
        assert_eq!(pu21_encode(1e-9, &p).unwrap(), 0.0);
        assert_eq!(
            pu21_encode(50000.0, &p).unwrap(),
            pu21_encode(10000.0, &p).unwrap()
        );
    }

    #[test]
    fn pu21_rejects_non_finite() {
        let p = Pu21Params::default();
        assert!(pu21_encode(f64::NAN, &p).is_err());
        assert!(pu21_encode(f64::INFINITY, &p).is_err());
        assert!(pu21_decode(f64::NAN, &p).is_err());
        assert!(pu21_decode(-0.1, &p).is_err());
    }

    #[test]
    fn pq_endpoints() {
        assert_eq!(pq_encode(0.0).unwrap(), 0.0);
        assert_eq!(pq_encode(10000.0).unwrap(), 1.0);
        assert_eq!(pq_decode(0.0).unwrap(), 0.0);
        assert_relative_eq!(pq_decode(1.0).unwrap(), 10000.0, max_relative = 1e-9);
    }

    #[test]
    fn pq_reference_level() {
        let v = pq_encode(100.0).unwrap();
        assert!(v > 0.50 && v < 0.52);
        assert_relative_eq!(v, PQ_AT_100, epsilon = 1e-12);
    }

    #[test]
    fn pq_roundtrip_on_log_grid() {
        for l in log_grid(0.005, 10000.0, 10_000) {
            let back = pq_decode(pq_encode(l).unwrap()).unwrap();
            assert_relative_eq!(back, l, max_relative = 1e-6);
        }
    }

    #[test]
    fn srgb_endpoints_and_breakpoint() {
        assert_eq!(srgb_encode(0.0), 0.0);
        assert_relative_eq!(srgb_encode(1.0), 1.0, epsilon = 1e-12);
        assert_eq!(srgb_decode(0.0), 0.0);
        assert_relative_eq!(srgb_decode(1.0), 1.0, epsilon = 1e-12);

        // both branches agree at the breakpoint
        let low = 12.92 * 0.0031308;
        let high = 1.055 * 0.0031308f64.powf(1.0 / 2.4) - 0.055;
        assert!((low - high).abs() < 1e-6);
        assert_relative_eq!(srgb_encode(0.0031308), 0.04045, epsilon = 1e-6);
    }

    #[test]
    fn srgb_roundtrip_dense() {
        for i in 0..=4096 {
            let x = i as f64 / 4096.0;
            assert!((srgb_decode(srgb_encode(x)) - x).abs() < 1e-9);
        }
    }

    /// The f32 evaluation of each roundtrip must stay close to the f64 one;
    /// reduced-precision arithmetic is where banding creeps in.
    #[test]
    fn roundtrips_agree_between_f32_and_f64() {
        fn pu21_encode_f32(l: f32, p: &Pu21Params) -> f32 {
            let l = l.clamp(p.l_min() as f32, p.l_max as f32);
            let d = l.log2() - p.l_min_log2 as f32;
            p.a as f32 * d * d + p.b as f32 * d
        }
        fn pu21_decode_f32(v: f32, p: &Pu21Params) -> f32 {
            let (a, b, lmin) = (p.a as f32, p.b as f32, p.l_min_log2 as f32);
            ((2.0 * a * lmin - b + (b * b + 4.0 * a * v).sqrt()) / (2.0 * a)).exp2()
        }
        let p = Pu21Params::default();
        for l in log_grid(0.005, 10000.0, 2_000) {
            let r64 = pu21_decode(pu21_encode(l, &p).unwrap(), &p).unwrap();
            let r32 = pu21_decode_f32(pu21_encode_f32(l as f32, &p), &p) as f64;
            assert_relative_eq!(r32, r64, max_relative = 1e-4);
        }
    }

    #[test]
    fn encode_image_constant_floor_is_zero() {
        let img = LinearImage::from_fn(4, 4, |_, _| [0.005; 3]).unwrap();
        let (encoded, clips) = encode_image(&img, TransferTag::Pu21).unwrap();
        assert!(encoded.data().iter().all(|&v| v == 0.0));
        assert_eq!(clips.total(), 0);
    }

    #[test]
    fn encode_image_counts_clipped_samples() {
        let img = LinearImage::from_fn(2, 1, |x, _| {
            if x == 0 {
                [0.001, 1.0, 1.0]
            } else {
                [1.0, 1.0, 1.0]
            }
        })
        .unwrap();
        let (_, clips) = encode_image(&img, TransferTag::Pu21).unwrap();
        assert_eq!(clips.below, 1);
        assert_eq!(clips.above, 0);
    }

    #[test]
    fn encode_image_matches_scalar_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let img = LinearImage::from_fn(8, 8, |_, _| {
            [(); 3].map(|_| rng.random_range(0.01..4000.0f32))
        })
        .unwrap();
        let p = Pu21Params::default();
        for tag in [TransferTag::Pu21, TransferTag::Pq, TransferTag::Srgb] {
            let (encoded, _) = encode_image(&img, tag).unwrap();
            for (i, &v) in img.data().iter().enumerate() {
                let expect = match tag {
                    TransferTag::Pu21 => pu21_encode(v as f64, &p).unwrap(),
                    TransferTag::Pq => pq_encode(v as f64).unwrap(),
                    TransferTag::Srgb => srgb_encode(v as f64),
                    TransferTag::LinearNormalized => unreachable!(),
                };
                assert_eq!(encoded.data()[i], expect as f32);
            }
        }
    }

    #[test]
    fn linear_normalized_divides_by_max() {
        let img = LinearImage::from_fn(2, 2, |x, y| {
            let v = (1 + x + 2 * y) as f32 * 1000.0;
            [v, v, v]
        })
        .unwrap();
        let (encoded, _) = encode_image(&img, TransferTag::LinearNormalized).unwrap();
        assert_eq!(encoded.norm_peak, Some(4000.0));
        for (enc, lin) in encoded.data().iter().zip(img.data()) {
            assert_relative_eq!(*enc as f64, *lin as f64 / 4000.0, max_relative = 1e-6);
        }
        let back = decode_image(&encoded).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert_relative_eq!(*a as f64, *b as f64, max_relative = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn image_roundtrips_within_tolerance(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = LinearImage::from_fn(6, 5, |_, _| {
                [(); 3].map(|_| {
                    let e: f32 = rng.random_range(-7.0..13.0);
                    e.exp2()
                })
            }).unwrap();
            for tag in [TransferTag::Pu21, TransferTag::Pq, TransferTag::LinearNormalized] {
                let (encoded, _) = encode_image(&img, tag).unwrap();
                let back = decode_image(&encoded).unwrap();
                for (a, b) in back.data().iter().zip(img.data()) {
                    prop_assert!(((*a as f64 - *b as f64) / *b as f64).abs() < 1e-6,
                        "tag {:?}: {} vs {}", tag, a, b);
                }
            }
        }
    }
}
