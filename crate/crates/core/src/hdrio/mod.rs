//! Bit-exact readers and writers for the HDR interchange formats used by the
//! toolkit: Radiance RGBE (`.hdr`), PFM, and binary PPM (P6).

mod pfm;
mod ppm;
mod rgbe;

pub use pfm::{read_pfm, read_pfm_gray, write_pfm, write_pfm_gray};
pub use ppm::write_ppm8;
pub use rgbe::{read_rgbe, write_rgbe, RgbeScanlineMode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HdrIoError {
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    InvalidImage(#[from] crate::image::ImageError),
}

impl HdrIoError {
    fn parse(offset: usize, reason: impl Into<String>) -> Self {
        HdrIoError::Parse {
            offset,
            reason: reason.into(),
        }
    }
}
