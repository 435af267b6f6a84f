//! Quality and rate-distortion metrics.

mod bdrate;
mod psnr;
mod rd;

pub use bdrate::{bd_rate, fit_log_rate, Cubic, RdPoint};
pub use psnr::{delta_psnr, psnr, sequence_psnr, DeltaPsnr, PsnrReport, PSNR_INFINITE};
pub use rd::{rd_sweep, rd_sweep_with, Enhancer, RdCurves, SweepStep};
