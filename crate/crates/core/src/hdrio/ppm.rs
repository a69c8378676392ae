//! Binary PPM (P6) writer for 8-bit LDR visualization output.

use super::HdrIoError;
use crate::xfer::{EncodedImage, TransferTag};

/// Serializes an sRGB-encoded image as binary PPM, mapping code values to
/// bytes with round-half-up of `v × 255`.
///
/// Only [`TransferTag::Srgb`] input makes sense on an 8-bit display path;
/// anything else is a contract error.
pub fn write_ppm8(img: &EncodedImage) -> Result<Vec<u8>, HdrIoError> {
    if img.tag != TransferTag::Srgb {
        return Err(HdrIoError::Contract(format!(
            "write_ppm8 requires an sRGB-tagged image, got {}",
            img.tag.name()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8),
    );
    Ok(out)
}
