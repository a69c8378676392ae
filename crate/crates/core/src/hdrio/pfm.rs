//! Portable float map (PFM) reader and writer.
//!
//! Color maps use the `PF` magic, single-channel maps `Pf`. A negative scale
//! token means little-endian samples; the scale magnitude is ignored. Rows
//! are stored bottom-to-top per the PFM convention, and the write/read cycle
//! is bit-exact.

use super::HdrIoError;
use crate::image::LinearImage;

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    /// Next whitespace-delimited token.
    fn token(&mut self) -> Result<&'a str, HdrIoError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(HdrIoError::parse(start, "unexpected end of PFM header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| HdrIoError::parse(start, "PFM header is not ASCII"))
    }
}

fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &str,
) -> Result<(usize, usize, bool, usize), HdrIoError> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let seen = cur.token()?;
    if seen != magic {
        if seen == "PF" || seen == "Pf" {
            return Err(HdrIoError::UnsupportedFormat(format!(
                "expected {magic} map, found {seen}"
            )));
        }
        return Err(HdrIoError::parse(0, format!("bad PFM magic '{seen}'")));
    }
    let width: usize = cur
        .token()?
        .parse()
        .map_err(|_| HdrIoError::parse(cur.pos, "bad PFM width"))?;
    let height: usize = cur
        .token()?
        .parse()
        .map_err(|_| HdrIoError::parse(cur.pos, "bad PFM height"))?;
    let scale: f32 = cur
        .token()?
        .parse()
        .map_err(|_| HdrIoError::parse(cur.pos, "bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(HdrIoError::parse(cur.pos, "PFM scale must be nonzero"));
    }
    if width == 0 || height == 0 {
        return Err(HdrIoError::parse(cur.pos, "zero PFM dimension"));
    }
    // exactly one whitespace byte separates the header from the samples
    let data_at = cur.pos + 1;
    Ok((width, height, scale < 0.0, data_at))
}

fn read_samples(
    bytes: &[u8],
    data_at: usize,
    count: usize,
    little_endian: bool,
) -> Result<Vec<f32>, HdrIoError> {
    let need = count * 4;
    if bytes.len() < data_at + need {
        return Err(HdrIoError::parse(
            bytes.len(),
            format!("PFM payload truncated ({} of {} bytes)", bytes.len() - data_at, need),
        ));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let at = data_at + i * 4;
        let raw: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if v.is_nan() {
            return Err(HdrIoError::parse(at, "NaN sample in PFM payload"));
        }
        if !v.is_finite() {
            return Err(HdrIoError::parse(at, "non-finite sample in PFM payload"));
        }
        samples.push(v);
    }
    Ok(samples)
}

/// Reads a color (`PF`) map into a linear image. Grayscale `Pf` input is an
/// unsupported-format error here; use [`read_pfm_gray`] for single-channel
/// data.
pub fn read_pfm(bytes: &[u8]) -> Result<LinearImage, HdrIoError> {
    let (width, height, little_endian, data_at) = parse_header(bytes, "PF")?;
    let samples = read_samples(bytes, data_at, width * height * 3, little_endian)?;
    // bottom-to-top storage: flip rows
    let mut data = vec![0.0f32; samples.len()];
    let row_len = width * 3;
    for y in 0..height {
        let src = (height - 1 - y) * row_len;
        data[y * row_len..(y + 1) * row_len].copy_from_slice(&samples[src..src + row_len]);
    }
    Ok(LinearImage::new(width, height, data)?)
}

/// Serializes a linear image as a little-endian `PF` map (scale `-1.0`).
pub fn write_pfm(img: &LinearImage) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    let row_len = img.width() * 3;
    for y in (0..img.height()).rev() {
        let row = &img.data()[y * row_len..(y + 1) * row_len];
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a grayscale (`Pf`) map as `(samples, width, height)` in top-down
/// row order.
pub fn read_pfm_gray(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize), HdrIoError> {
    let (width, height, little_endian, data_at) = parse_header(bytes, "Pf")?;
    let samples = read_samples(bytes, data_at, width * height, little_endian)?;
    let mut data = vec![0.0f32; samples.len()];
    for y in 0..height {
        let src = (height - 1 - y) * width;
        data[y * width..(y + 1) * width].copy_from_slice(&samples[src..src + width]);
    }
    Ok((data, width, height))
}

/// Serializes single-channel samples (top-down row order) as a little-endian
/// `Pf` map.
pub fn write_pfm_gray(data: &[f32], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(data.len(), width * height, "sample count mismatch");
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for &v in &data[y * width..(y + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
