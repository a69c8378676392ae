//! Radiance RGBE (`.hdr`) reader and writer.
//!
//! Pixels are stored as shared-exponent quadruples `(r, g, b, e)` decoding to
//! `c · 2^(e−136)` per channel, with `e == 0` meaning black. Scanlines may be
//! flat or adaptive run-length encoded (the "new" RLE with a `(2, 2, hi, lo)`
//! marker); both are accepted on read.

use super::HdrIoError;
use crate::image::LinearImage;

/// Scanline layout for [`write_rgbe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgbeScanlineMode {
    /// One raw quadruple per pixel.
    Flat,
    /// Per-component run-length encoding; only legal for widths in
    /// `[8, 32767]`.
    AdaptiveRle,
}

const RLE_MIN_WIDTH: usize = 8;
const RLE_MAX_WIDTH: usize = 32767;

/// Decodes one shared-exponent quadruple to linear channels.
fn decode_quad(q: [u8; 4]) -> [f32; 3] {
    if q[3] == 0 {
        return [0.0; 3];
    }
    let s = ((q[3] as i32 - 136) as f32).exp2();
    [q[0] as f32 * s, q[1] as f32 * s, q[2] as f32 * s]
}

/// Quantizes linear channels to a shared-exponent quadruple, rounding the
/// mantissas to nearest and carrying into the exponent when a mantissa
/// would overflow.
fn encode_quad(rgb: [f32; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if v < 1e-32 {
        return [0, 0, 0, 0];
    }
    let exp = exponent(v);
    let quantize = |exp: i32| -> Option<[u8; 4]> {
        let scale = (8.0f64 - exp as f64).exp2();
        let mut out = [0u8; 4];
        for c in 0..3 {
            let code = (rgb[c] as f64 * scale).round();
            if code > 255.0 {
                return None;
            }
            out[c] = code as u8;
        }
        out[3] = (exp + 128) as u8;
        Some(out)
    };
    // rounding can push the max channel to 256; retry one exponent up
    quantize(exp)
        .or_else(|| quantize(exp + 1))
        .expect("mantissa fits after carry")
}

/// Exponent `e` with `v ∈ [2^(e−1), 2^e)`; `v` must be positive and normal
/// (guaranteed by the `1e-32` floor above).
fn exponent(v: f32) -> i32 {
    let biased = ((v.to_bits() >> 23) & 0xff) as i32;
    biased - 126
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HdrIoError> {
        if self.pos + n > self.bytes.len() {
            return Err(HdrIoError::parse(
                self.bytes.len(),
                format!("unexpected end of stream ({} bytes wanted)", n),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn byte(&mut self) -> Result<u8, HdrIoError> {
        Ok(self.take(1)?[0])
    }

    fn line(&mut self) -> Result<&'a str, HdrIoError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(HdrIoError::parse(start, "unterminated header line"));
        }
        let line = &self.bytes[start..self.pos];
        self.pos += 1; // consume '\n'
        std::str::from_utf8(line)
            .map_err(|_| HdrIoError::parse(start, "header line is not valid UTF-8"))
    }
}

/// Parses a Radiance RGBE stream into a linear image.
///
/// `EXPOSURE` header lines are accumulated multiplicatively and divided out of
/// the pixel data. Only the `-Y H +X W` orientation is accepted.
pub fn read_rgbe(bytes: &[u8]) -> Result<LinearImage, HdrIoError> {
    let mut cur = Cursor { bytes, pos: 0 };

    let magic = cur.line()?;
    if !(magic.starts_with("#?RADIANCE") || magic.starts_with("#?RGBE")) {
        return Err(HdrIoError::parse(0, "missing #?RADIANCE / #?RGBE magic"));
    }

    let mut exposure = 1.0f64;
    loop {
        let offset = cur.pos;
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        if line.starts_with('#') {
            continue;
        }
        if let Some(value) = line.strip_prefix("FORMAT=") {
            if value.trim() != "32-bit_rle_rgbe" {
                return Err(HdrIoError::parse(
                    offset,
                    format!("unsupported FORMAT '{}'", value.trim()),
                ));
            }
        } else if let Some(value) = line.strip_prefix("EXPOSURE=") {
            let e: f64 = value.trim().parse().map_err(|_| {
                HdrIoError::parse(offset, format!("bad EXPOSURE value '{}'", value.trim()))
            })?;
            if e <= 0.0 || !e.is_finite() {
                return Err(HdrIoError::parse(offset, "EXPOSURE must be positive"));
            }
            exposure *= e;
        }
        // other header variables are ignored
    }

    let res_offset = cur.pos;
    let res = cur.line()?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match parts.as_slice() {
        ["-Y", h, "+X", w] => {
            let h: usize = h
                .parse()
                .map_err(|_| HdrIoError::parse(res_offset, "bad height"))?;
            let w: usize = w
                .parse()
                .map_err(|_| HdrIoError::parse(res_offset, "bad width"))?;
            (h, w)
        }
        _ => {
            return Err(HdrIoError::parse(
                res_offset,
                format!("unsupported resolution/orientation line '{res}'"),
            ))
        }
    };
    if width == 0 || height == 0 {
        return Err(HdrIoError::parse(res_offset, "zero image dimension"));
    }

    let inv_exposure = 1.0 / exposure;
    let mut data = Vec::with_capacity(width * height * 3);
    let mut quads = vec![[0u8; 4]; width];
    for _ in 0..height {
        read_scanline(&mut cur, width, &mut quads)?;
        for &q in &quads {
            let [r, g, b] = decode_quad(q);
            data.push((r as f64 * inv_exposure) as f32);
            data.push((g as f64 * inv_exposure) as f32);
            data.push((b as f64 * inv_exposure) as f32);
        }
    }
    Ok(LinearImage::new(width, height, data)?)
}

fn read_scanline(
    cur: &mut Cursor,
    width: usize,
    quads: &mut [[u8; 4]],
) -> Result<(), HdrIoError> {
    let start = cur.pos;
    let head: [u8; 4] = cur.take(4)?.try_into().unwrap();
    let is_rle = head[0] == 2
        && head[1] == 2
        && head[2] & 0x80 == 0
        && ((head[2] as usize) << 8 | head[3] as usize) == width
        && (RLE_MIN_WIDTH..=RLE_MAX_WIDTH).contains(&width);

    if is_rle {
        let mut component = vec![0u8; width];
        for c in 0..4 {
            let mut filled = 0usize;
            while filled < width {
                let code_offset = cur.pos;
                let code = cur.byte()?;
                if code > 128 {
                    let run = (code - 128) as usize;
                    if filled + run > width {
                        return Err(HdrIoError::parse(code_offset, "RLE run overflows scanline"));
                    }
                    let value = cur.byte()?;
                    component[filled..filled + run].fill(value);
                    filled += run;
                } else if code == 0 {
                    return Err(HdrIoError::parse(code_offset, "zero-length RLE literal"));
                } else {
                    let count = code as usize;
                    if filled + count > width {
                        return Err(HdrIoError::parse(
                            code_offset,
                            "RLE literal overflows scanline",
                        ));
                    }
                    component[filled..filled + count].copy_from_slice(cur.take(count)?);
                    filled += count;
                }
            }
            for (x, quad) in quads.iter_mut().enumerate() {
                quad[c] = component[x];
            }
        }
    } else {
        // flat scanline: the probed header is pixel 0
        quads[0] = head;
        for quad in quads.iter_mut().skip(1) {
            *quad = cur.take(4)?.try_into().unwrap();
        }
        let _ = start;
    }
    Ok(())
}

/// Serializes an image as Radiance RGBE.
///
/// Returns the bytes together with the scanline mode actually used: a width
/// outside `[8, 32767]` cannot be run-length encoded and falls back to
/// [`RgbeScanlineMode::Flat`].
pub fn write_rgbe(img: &LinearImage, mode: RgbeScanlineMode) -> (Vec<u8>, RgbeScanlineMode) {
    let width = img.width();
    let mode = match mode {
        RgbeScanlineMode::AdaptiveRle
            if !(RLE_MIN_WIDTH..=RLE_MAX_WIDTH).contains(&width) =>
        {
            RgbeScanlineMode::Flat
        }
        m => m,
    };

    let mut out = Vec::new();
    out.extend_from_slice(b"#?RADIANCE\n");
    out.extend_from_slice(b"FORMAT=32-bit_rle_rgbe\n");
    out.extend_from_slice(b"\n");
    out.extend_from_slice(format!("-Y {} +X {}\n", img.height(), width).as_bytes());

    let mut quads = vec![[0u8; 4]; width];
    for y in 0..img.height() {
        for (x, quad) in quads.iter_mut().enumerate() {
            *quad = encode_quad(img.pixel(x, y));
        }
        match mode {
            RgbeScanlineMode::Flat => {
                for q in &quads {
                    out.extend_from_slice(q);
                }
            }
            RgbeScanlineMode::AdaptiveRle => {
                out.push(2);
                out.push(2);
                out.push((width >> 8) as u8);
                out.push((width & 0xff) as u8);
                let mut component = vec![0u8; width];
                for c in 0..4 {
                    for (x, q) in quads.iter().enumerate() {
                        component[x] = q[c];
                    }
                    write_rle_component(&component, &mut out);
                }
            }
        }
    }
    (out, mode)
}

/// Classic Radiance RLE: runs of at least 4 identical bytes become
/// `(128+len, value)` records (len ≤ 127), everything between becomes
/// literal chunks of at most 128 bytes.
fn write_rle_component(component: &[u8], out: &mut Vec<u8>) {
    const MIN_RUN: usize = 4;
    let n = component.len();
    let mut pos = 0;
    while pos < n {
        // find the next run of MIN_RUN or more
        let mut run_start = pos;
        let mut run_len = 0;
        while run_start < n {
            run_len = 1;
            while run_start + run_len < n
                && run_len < 127
                && component[run_start + run_len] == component[run_start]
            {
                run_len += 1;
            }
            if run_len >= MIN_RUN {
                break;
            }
            run_start += run_len;
        }
        if run_start >= n {
            run_len = 0;
            run_start = n;
        }

        // literals up to the run
        let mut lit = pos;
        while lit < run_start {
            let count = (run_start - lit).min(128);
            out.push(count as u8);
            out.extend_from_slice(&component[lit..lit + count]);
            lit += count;
        }

        if run_len >= MIN_RUN {
            out.push(128 + run_len as u8);
            out.push(component[run_start]);
            pos = run_start + run_len;
        } else {
            pos = run_start;
        }
    }
}
