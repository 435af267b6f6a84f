use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::frame::{Plane, Sequence};

/// Returned by [`psnr`] for identical planes.
pub const PSNR_INFINITE: f64 = f64::INFINITY;

/// `10 log10(peak^2 / MSE)` with `peak = 2^bit_depth - 1`.
pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    if !a.same_geometry(b) {
        bail!(
            Argument,
            "PSNR of {}x{}@{} against {}x{}@{}",
            a.width(),
            a.height(),
            a.bit_depth(),
            b.width(),
            b.height(),
            b.bit_depth()
        );
    }
    let sse: u64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_INFINITE);
    }
    let mse = sse as f64 / a.samples().len() as f64;
    let peak = a.max_value() as f64;
    Ok(10.0 * libm::log10(peak * peak / mse))
}

/// Per-frame PSNR and their average. Infinite frames are left out of the
/// average and counted in `excluded`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsnrReport {
    pub per_frame: Vec<f64>,
    pub average: f64,
    pub excluded: usize,
}

impl PsnrReport {
    pub fn from_frames(per_frame: Vec<f64>) -> Self {
        let finite: Vec<f64> = per_frame.iter().copied().filter(|v| v.is_finite()).collect();
        let excluded = per_frame.len() - finite.len();
        if excluded > 0 {
            log::warn!("{excluded} frame(s) with infinite PSNR left out of the average");
        }
        let average = if finite.is_empty() {
            PSNR_INFINITE
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self { per_frame, average, excluded }
    }
}

/// Luma PSNR of every frame of `test` against `reference`.
pub fn sequence_psnr(test: &Sequence, reference: &Sequence) -> Result<PsnrReport> {
    if !test.matches(reference) {
        bail!(
            Pairing,
            "cannot pair {} frames of {}x{} with {} frames of {}x{}",
            test.len(),
            test.width(),
            test.height(),
            reference.len(),
            reference.width(),
            reference.height()
        );
    }
    let per_frame = test
        .frames()
        .iter()
        .zip(reference.frames())
        .map(|(a, b)| psnr(&a.y, &b.y))
        .collect::<Result<Vec<_>>>()?;
    Ok(PsnrReport::from_frames(per_frame))
}

/// Enhanced-versus-decoded PSNR gain against a common reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaPsnr {
    pub enhanced: PsnrReport,
    pub decoded: PsnrReport,
    pub per_frame: Vec<f64>,
    pub average: f64,
}

pub fn delta_psnr(enhanced: &Sequence, decoded: &Sequence, reference: &Sequence) -> Result<DeltaPsnr> {
    let enh = sequence_psnr(enhanced, reference)?;
    let dec = sequence_psnr(decoded, reference)?;
    let per_frame = enh
        .per_frame
        .iter()
        .zip(&dec.per_frame)
        .map(|(&e, &d)| if e == d { 0.0 } else { e - d })
        .collect();
    let average = if enh.average == dec.average { 0.0 } else { enh.average - dec.average };
    Ok(DeltaPsnr { enhanced: enh, decoded: dec, per_frame, average })
}
