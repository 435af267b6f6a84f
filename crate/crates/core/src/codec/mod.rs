//! Encode/decode chain abstraction and the in-process mock codec.

mod dct;
mod mock;

pub use dct::{dct8_forward, dct8_inverse, Block8};
pub use mock::{dequantize, mock_encode_decode, qstep, quantize, MockCodec, MOCK_QP_MAX};

use crate::error::{bail, Result};
use crate::frame::Sequence;

/// Output of one encode/decode round trip.
#[derive(Debug, Clone)]
pub struct CodecResult {
    pub decoded: Sequence,
    pub bitrate_kbps: f64,
    pub bitstream_bytes: u64,
}

/// Anything that can push a sequence through an encoder and back.
pub trait Codec {
    fn encode_decode(&mut self, seq: &Sequence, qp: i32) -> Result<CodecResult>;
}

/// `bytes * 8 * fps / (1000 * frames)`.
pub fn bitrate_kbps(bitstream_bytes: u64, frame_rate: f64, frames: usize) -> f64 {
    bitstream_bytes as f64 * 8.0 * frame_rate / (1000.0 * frames as f64)
}

/// Checks that a decoder handed back what was put in.
pub fn check_integrity(input: &Sequence, decoded: &Sequence) -> Result<()> {
    if decoded.len() != input.len() {
        bail!(
            Integrity,
            "decoder produced {} frames, expected {}",
            decoded.len(),
            input.len()
        );
    }
    if !input.matches(decoded) {
        bail!(
            Integrity,
            "decoded geometry {}x{}@{} differs from input {}x{}@{}",
            decoded.width(),
            decoded.height(),
            decoded.bit_depth(),
            input.width(),
            input.height(),
            input.bit_depth()
        );
    }
    Ok(())
}
