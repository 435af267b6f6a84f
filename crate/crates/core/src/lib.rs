//! Pure algorithmic core of the OVQE video quality enhancement toolkit.
//!
//! Everything here works on in-memory data and needs only `alloc`: planar
//! YUV frames, a block-DCT mock codec, the enhancement network with its
//! reverse-mode differentiation, the Charbonnier/Adam training loop, and the
//! PSNR / BD-rate metrics. File IO, subprocess codecs, checkpoints and the
//! command line live in the `ovqe` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codec;
mod error;
pub mod frame;
pub mod metrics;
pub mod nn;
mod scalar;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
