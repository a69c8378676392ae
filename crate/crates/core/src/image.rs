//! Linear image containers and the pixel-level operations shared by the rest
//! of the crate: luminance extraction, peak rescaling, Gaussian smoothing,
//! percentiles, cropping and bilinear resizing.
//!
//! Pixel data is stored as `f32` row-major `H×W×3` (or `H×W` for
//! [`LumaMap`]); all arithmetic runs in `f64`.

use rayon::prelude::*;
use thiserror::Error;

/// Calibration peak used when rescaling HDR content for encoding, in cd/m².
pub const DEFAULT_PEAK_LUMINANCE: f32 = 4000.0;

/// BT.709 luma weights for linear RGB.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    DataLength {
        got: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("negative sample {value} at index {index}")]
    Negative { index: usize, value: f32 },
    #[error("image has no strictly positive luminance; scale is undefined")]
    AllZero,
    #[error("crop {x},{y} {w}x{h} exceeds image bounds {width}x{height}")]
    CropOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("requested peak luminance must be positive (got {0})")]
    NonPositivePeak(f32),
    #[error("blur sigma must be positive (got {0})")]
    NonPositiveSigma(f32),
}

/// An `H×W×3` image in absolute linear radiometric units (cd/m² per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    /// Calibration peak this image was rescaled to, if any.
    pub peak_nominal: Option<f32>,
}

impl LinearImage {
    /// Builds an image from row-major RGB data, validating that every sample
    /// is finite and non-negative.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(ImageError::DataLength {
                got: data.len(),
                width,
                height,
                channels: 3,
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite { index });
            }
            if v < 0.0 {
                return Err(ImageError::Negative { index, value: v });
            }
        }
        Ok(Self {
            width,
            height,
            data,
            peak_nominal: None,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Constructs without re-validating; callers must guarantee the invariants.
    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
            peak_nominal: None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major `H×W×3` samples.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// BT.709 luminance per pixel.
    pub fn luminance(&self) -> LumaMap {
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                (LUMA_WEIGHTS[0] * px[0] as f64
                    + LUMA_WEIGHTS[1] * px[1] as f64
                    + LUMA_WEIGHTS[2] * px[2] as f64) as f32
            })
            .collect();
        LumaMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Maximum BT.709 luminance over all pixels.
    pub fn max_luminance(&self) -> f32 {
        self.luminance().data.iter().fold(0.0f32, |m, &v| m.max(v))
    }

    /// Globally scales the image so its maximum luminance equals `l_peak`.
    ///
    /// Fails on all-zero images, where the scale would be undefined.
    pub fn rescale_to_peak(&self, l_peak: f32) -> Result<LinearImage, ImageError> {
        if !(l_peak > 0.0) {
            return Err(ImageError::NonPositivePeak(l_peak));
        }
        let max = self.max_luminance();
        if max <= 0.0 {
            return Err(ImageError::AllZero);
        }
        let scale = l_peak as f64 / max as f64;
        let data = self.data.iter().map(|&v| (v as f64 * scale) as f32).collect();
        let mut out = LinearImage::from_raw_unchecked(self.width, self.height, data);
        out.peak_nominal = Some(l_peak);
        Ok(out)
    }

    /// Copies the sub-rectangle starting at `(x, y)` with size `w×h`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<LinearImage, ImageError> {
        if w == 0 || h == 0 {
            return Err(ImageError::EmptyImage {
                width: w,
                height: h,
            });
        }
        if x + w > self.width || y + h > self.height {
            return Err(ImageError::CropOutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(LinearImage::from_raw_unchecked(w, h, data))
    }

    /// Bilinear resize with half-pixel sample alignment and edge clamping.
    pub fn resize_bilinear(&self, w: usize, h: usize) -> Result<LinearImage, ImageError> {
        if w == 0 || h == 0 {
            return Err(ImageError::EmptyImage {
                width: w,
                height: h,
            });
        }
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        let mut data = vec![0.0f32; w * h * 3];
        data.par_chunks_mut(w * 3)
            .enumerate()
            .for_each(|(dy, row)| {
                let fy = (dy as f64 + 0.5) * sy - 0.5;
                let y0 = fy.floor().clamp(0.0, (self.height - 1) as f64) as usize;
                let y1 = (y0 + 1).min(self.height - 1);
                let wy = (fy - y0 as f64).clamp(0.0, 1.0);
                for dx in 0..w {
                    let fx = (dx as f64 + 0.5) * sx - 0.5;
                    let x0 = fx.floor().clamp(0.0, (self.width - 1) as f64) as usize;
                    let x1 = (x0 + 1).min(self.width - 1);
                    let wx = (fx - x0 as f64).clamp(0.0, 1.0);
                    for c in 0..3 {
                        let p00 = self.data[(y0 * self.width + x0) * 3 + c] as f64;
                        let p01 = self.data[(y0 * self.width + x1) * 3 + c] as f64;
                        let p10 = self.data[(y1 * self.width + x0) * 3 + c] as f64;
                        let p11 = self.data[(y1 * self.width + x1) * 3 + c] as f64;
                        let top = p00 * (1.0 - wx) + p01 * wx;
                        let bot = p10 * (1.0 - wx) + p11 * wx;
                        row[dx * 3 + c] = (top * (1.0 - wy) + bot * wy) as f32;
                    }
                }
            });
        Ok(LinearImage::from_raw_unchecked(w, h, data))
    }

    /// Applies `f` to every sample, producing a new image. The result is
    /// re-validated so the non-negativity invariant cannot be broken.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<LinearImage, ImageError> {
        LinearImage::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// A single-channel `H×W` map of luminance values in cd/m².
#[derive(Debug, Clone, PartialEq)]
pub struct LumaMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LumaMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::DataLength {
                got: data.len(),
                width,
                height,
                channels: 1,
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite { index });
            }
            if v < 0.0 {
                return Err(ImageError::Negative { index, value: v });
            }
        }
        Ok(Self {
            width,
            height,
            data,
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

    /// Separable Gaussian convolution with kernel radius `⌈3σ⌉`, kernel
    /// normalized to sum 1, and reflected boundaries.
    pub fn gaussian_blur(&self, sigma: f32) -> Result<LumaMap, ImageError> {
        if !(sigma > 0.0) {
            return Err(ImageError::NonPositiveSigma(sigma));
        }
        let kernel = gaussian_kernel(sigma as f64);
        let horizontal = convolve_rows(&self.data, self.width, self.height, &kernel);
        let transposed = transpose(&horizontal, self.width, self.height);
        let vertical = convolve_rows(&transposed, self.height, self.width, &kernel);
        let data = transpose(&vertical, self.height, self.width);
        Ok(LumaMap {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Linear-interpolation percentile over the sorted flattened values,
    /// with rank `p/100 × (N−1)`.
    pub fn percentile(&self, p: f64) -> f64 {
        let mut sorted: Vec<f32> = self.data.clone();
        sorted.sort_by(f32::total_cmp);
        percentile_sorted(&sorted, p)
    }
}

/// Percentile of an already sorted slice, same rank convention as
/// [`LumaMap::percentile`].
pub(crate) fn percentile_sorted(sorted: &[f32], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

/// Normalized 1-D Gaussian taps for radius `⌈3σ⌉`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in -(radius as isize)..=(radius as isize) {
        let x = k as f64;
        kernel.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    kernel
}

/// Mirrors an out-of-range index back into `0..n` ("abba" reflection).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn convolve_rows(data: &[f32], width: usize, height: usize, kernel: &[f64]) -> Vec<f32> {
    let radius = kernel.len() / 2;
    let mut out = vec![0.0f32; data.len()];
    out.par_chunks_mut(width)
        .zip(data.par_chunks(width))
        .take(height)
        .for_each(|(dst, src)| {
            for x in 0..width {
                let mut acc = 0.0f64;
                for (k, &w) in kernel.iter().enumerate() {
                    let i = x as isize + k as isize - radius as isize;
                    acc += w * src[reflect(i, width)] as f64;
                }
                dst[x] = acc as f32;
            }
        });
    out
}

fn transpose(data: &[f32], width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}
