//! Block-DCT stand-in for a real codec.
//!
//! Every plane is cut into 8x8 blocks (edge blocks replicate-padded), each
//! block is transformed, uniformly quantized with `Qstep = 2^((qp-4)/6)`,
//! dequantized and inverse transformed. The result has the blocking and
//! high-frequency loss of a real hybrid codec without any entropy coding.
//! The pseudo-bitstream costs one byte per non-zero quantized coefficient.

use alloc::vec::Vec;

use super::dct::{dct8_forward, dct8_inverse};
use super::{bitrate_kbps, Codec, CodecResult};
use crate::error::{bail, Result};
use crate::frame::{Plane, Sequence, VideoFrame};

pub const MOCK_QP_MAX: i32 = 51;

/// Quantizer step size for a QP.
pub fn qstep(qp: i32) -> f64 {
    libm::pow(2.0, (qp as f64 - 4.0) / 6.0)
}

/// Round-half-away-from-zero quantization level.
#[inline]
pub fn quantize(coeff: f64, step: f64) -> i64 {
    libm::round(coeff / step) as i64
}

#[inline]
pub fn dequantize(level: i64, step: f64) -> f64 {
    level as f64 * step
}

/// Pushes one plane through the block pipeline; returns non-zero level count.
fn code_plane(plane: &mut Plane, step: f64) -> u64 {
    let (w, h) = (plane.width(), plane.height());
    let max = plane.max_value() as f64;
    let mut nonzero = 0u64;
    let mut block = [0.0f64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                let sy = (by + y).min(h - 1);
                for x in 0..8 {
                    let sx = (bx + x).min(w - 1);
                    block[y * 8 + x] = plane.get(sx, sy) as f64;
                }
            }
            let mut coeffs = dct8_forward(&block).expect("8x8 block");
            for c in coeffs.iter_mut() {
                let level = quantize(*c, step);
                if level != 0 {
                    nonzero += 1;
                }
                *c = dequantize(level, step);
            }
            let rec = dct8_inverse(&coeffs).expect("8x8 block");
            let samples = plane.samples_mut();
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    let v = libm::round(rec[y * 8 + x]).clamp(0.0, max);
                    samples[(by + y) * w + bx + x] = v as u16;
                }
            }
        }
    }
    nonzero
}

/// Runs the mock codec over every plane of every frame.
pub fn mock_encode_decode(seq: &Sequence, qp: i32) -> Result<CodecResult> {
    if !(0..=MOCK_QP_MAX).contains(&qp) {
        bail!(Argument, "mock codec QP {qp} outside [0, {MOCK_QP_MAX}]");
    }
    let step = qstep(qp);
    let mut nonzero = 0u64;
    let mut frames = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        let mut y = f.y.clone();
        let mut u = f.u.clone();
        let mut v = f.v.clone();
        nonzero += code_plane(&mut y, step);
        nonzero += code_plane(&mut u, step);
        nonzero += code_plane(&mut v, step);
        frames.push(VideoFrame::new(y, u, v, f.index)?);
    }
    let decoded = Sequence::new(frames, seq.frame_rate())?;
    Ok(CodecResult {
        bitrate_kbps: bitrate_kbps(nonzero, seq.frame_rate(), seq.len()),
        bitstream_bytes: nonzero,
        decoded,
    })
}

/// [`Codec`] adapter for [`mock_encode_decode`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockCodec;

impl Codec for MockCodec {
    fn encode_decode(&mut self, seq: &Sequence, qp: i32) -> Result<CodecResult> {
        mock_encode_decode(seq, qp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::synthetic::moving_texture;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand::{RngCore, SeedableRng};

    fn random_block(seed: u64) -> [f64; 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = [0.0; 64];
        for v in b.iter_mut() {
            *v = (rng.next_u32() % 256) as f64;
        }
        b
    }

    #[test]
    fn qp4_is_unit_step() {
        assert!((qstep(4) - 1.0).abs() < 1e-15);
        assert!((qstep(10) - 2.0).abs() < 1e-12);
        // step-1 quantizer is pure rounding
        for c in [-3.49, -0.5, 0.2, 0.5, 7.51] {
            let q = dequantize(quantize(c, 1.0), 1.0);
            assert!((q - c).abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn constant_planes_survive_any_qp() {
        for qp in [0, 22, 37, 51] {
            for value in [0u16, 17, 128, 255] {
                let f = VideoFrame::filled(16, 16, 8, value, 0).unwrap();
                let seq = Sequence::new(alloc::vec![f], 30.0).unwrap();
                let out = mock_encode_decode(&seq, qp).unwrap();
                let step = qstep(qp);
                // DC error <= step/2 spreads uniformly over 64 samples as step/16.
                let bound = (step / 16.0).ceil();
                for (a, b) in seq.frames()[0].y.samples().iter().zip(out.decoded.frames()[0].y.samples()) {
                    assert!((*a as f64 - *b as f64).abs() <= bound, "qp {qp} value {value}");
                }
            }
        }
    }

    #[test]
    fn near_lossless_above_50db() {
        let seq = moving_texture(2, 32, 32, 3);
        let out = mock_encode_decode(&seq, 0).unwrap();
        for (a, b) in seq.frames().iter().zip(out.decoded.frames()) {
            assert!(psnr(&a.y, &b.y).unwrap() > 50.0);
        }
    }

    #[test]
    fn higher_qp_lowers_quality() {
        let seq = moving_texture(3, 64, 64, 11);
        let lo = mock_encode_decode(&seq, 32).unwrap();
        let hi = mock_encode_decode(&seq, 47).unwrap();
        let p = |r: &CodecResult| -> f64 {
            seq.frames().iter().zip(r.decoded.frames()).map(|(a, b)| psnr(&a.y, &b.y).unwrap()).sum()
        };
        assert!(p(&hi) <= p(&lo));
        assert!(hi.bitrate_kbps < lo.bitrate_kbps);
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let seq = moving_texture(4, 40, 24, 5);
        let a = mock_encode_decode(&seq, 30).unwrap();
        let b = mock_encode_decode(&seq, 30).unwrap();
        assert_eq!(a.decoded, b.decoded);
        assert_eq!(a.bitstream_bytes, b.bitstream_bytes);
        assert!(seq.matches(&a.decoded));
    }

    #[test]
    fn qp_range_checked() {
        let seq = moving_texture(1, 16, 16, 0);
        assert!(mock_encode_decode(&seq, 52).is_err());
        assert!(mock_encode_decode(&seq, -1).is_err());
    }

    #[test]
    fn bitrate_formula() {
        // 1000 bytes over 10 frames at 30 fps = 24 kbps
        assert!((bitrate_kbps(1000, 30.0, 10) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn nonzero_count_nonincreasing_in_qp() {
        for seed in 0..8 {
            let coeffs = dct8_forward(&random_block(seed)).unwrap();
            let mut last = usize::MAX;
            for qp in 0..=51 {
                let s = qstep(qp);
                let n = coeffs.iter().filter(|&&c| quantize(c, s) != 0).count();
                assert!(n <= last, "seed {seed} qp {qp}");
                last = n;
            }
        }
    }

    proptest! {
        #[test]
        fn quantizer_error_bounded_by_half_step(c in -2000.0f64..2000.0, qp in 0i32..=51) {
            let s = qstep(qp);
            prop_assert!((dequantize(quantize(c, s), s) - c).abs() <= s / 2.0 + 1e-9);
        }
    }
}
