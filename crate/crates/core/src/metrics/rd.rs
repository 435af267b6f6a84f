//! Rate-distortion sweeps over a list of QPs.

use alloc::vec::Vec;

use super::bdrate::RdPoint;
use super::psnr::sequence_psnr;
use crate::codec::{Codec, CodecResult};
use crate::error::{bail, Result};
use crate::frame::Sequence;
use crate::nn::{enhance_sequence, ModelConfig, Weights};
use crate::Scalar;

/// Trained weights plus the architecture they belong to.
#[derive(Debug, Clone, Copy)]
pub struct Enhancer<'a, T: Scalar> {
    pub weights: &'a Weights<T>,
    pub config: &'a ModelConfig,
}

impl<'a, T: Scalar> Enhancer<'a, T> {
    pub fn new(weights: &'a Weights<T>, config: &'a ModelConfig) -> Self {
        Self { weights, config }
    }

    pub fn enhance(&self, decoded: &Sequence) -> Result<Sequence> {
        enhance_sequence(decoded, self.weights, self.config)
    }
}

/// Baseline and enhanced RD curves, one point per QP, in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurves {
    pub qps: Vec<i32>,
    pub baseline: Vec<RdPoint>,
    pub enhanced: Vec<RdPoint>,
}

/// Everything produced at one QP, handed to the sweep observer.
#[derive(Debug)]
pub struct SweepStep<'s> {
    pub qp: i32,
    pub coded: &'s CodecResult,
    pub enhanced: &'s Sequence,
    pub baseline: RdPoint,
    pub enhanced_point: RdPoint,
}

pub fn rd_sweep<T: Scalar, C: Codec + ?Sized>(
    raw: &Sequence,
    qps: &[i32],
    codec: &mut C,
    enhancer: Option<Enhancer<'_, T>>,
) -> Result<RdCurves> {
    rd_sweep_with(raw, qps, codec, enhancer, |_| Ok(()))
}

/// Like [`rd_sweep`], calling `observe` after each QP.
pub fn rd_sweep_with<T: Scalar, C: Codec + ?Sized>(
    raw: &Sequence,
    qps: &[i32],
    codec: &mut C,
    enhancer: Option<Enhancer<'_, T>>,
    mut observe: impl FnMut(&SweepStep<'_>) -> Result<()>,
) -> Result<RdCurves> {
    if qps.is_empty() {
        bail!(Argument, "QP list is empty");
    }
    let mut curves = RdCurves { qps: qps.to_vec(), baseline: Vec::new(), enhanced: Vec::new() };
    for &qp in qps {
        let coded = codec.encode_decode(raw, qp)?;
        let base_db = sequence_psnr(&coded.decoded, raw)?.average;
        let (enhanced, enh_db) = match &enhancer {
            Some(e) => {
                let seq = e.enhance(&coded.decoded)?;
                let db = sequence_psnr(&seq, raw)?.average;
                (seq, db)
            }
            None => (coded.decoded.clone(), base_db),
        };
        let baseline = RdPoint::new(coded.bitrate_kbps, base_db);
        let enhanced_point = RdPoint::new(coded.bitrate_kbps, enh_db);
        observe(&SweepStep { qp, coded: &coded, enhanced: &enhanced, baseline, enhanced_point })?;
        curves.baseline.push(baseline);
        curves.enhanced.push(enhanced_point);
    }
    Ok(curves)
}
