pub mod dataprep;
pub mod hdrio;
pub mod image;
pub mod jod;
pub mod lab;
pub mod metrics;
pub mod rawsim;
pub mod xfer;
