//! Bjøntegaard delta rate.
//!
//! Each RD curve is modelled as a least-squares cubic giving `log10(rate)`
//! as a function of PSNR. The two cubics are integrated analytically over
//! the PSNR interval both curves cover; the mean log-rate difference is
//! turned into a percentage. Negative values mean the test curve needs
//! less rate for the same quality.

use alloc::vec::Vec;

use crate::error::{bail, Result};

/// One rate-distortion measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub bitrate_kbps: f64,
    pub psnr_db: f64,
}

impl RdPoint {
    pub fn new(bitrate_kbps: f64, psnr_db: f64) -> Self {
        Self { bitrate_kbps, psnr_db }
    }
}

/// Cubic in the normalized variable `u = (x - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubic {
    pub coeffs: [f64; 4],
    pub center: f64,
    pub scale: f64,
}

impl Cubic {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    /// Exact integral over `[a, b]` in the original variable.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let prim = |x: f64| {
            let u = (x - self.center) / self.scale;
            let mut p = 0.0;
            let mut pow = u;
            for (i, c) in self.coeffs.iter().enumerate() {
                p += c * pow / (i + 1) as f64;
                pow *= u;
            }
            p * self.scale
        };
        prim(b) - prim(a)
    }
}

fn validate(points: &[RdPoint], which: &str) -> Result<()> {
    if points.len() < 4 {
        bail!(Argument, "{which} curve has {} points, BD-rate needs at least 4", points.len());
    }
    for p in points {
        if !(p.bitrate_kbps > 0.0) || !p.bitrate_kbps.is_finite() || !p.psnr_db.is_finite() {
            bail!(Argument, "{which} curve has invalid point ({} kbps, {} dB)", p.bitrate_kbps, p.psnr_db);
        }
    }
    let ascending = points[1].bitrate_kbps > points[0].bitrate_kbps;
    for pair in points.windows(2) {
        let (a, b) = if ascending { (pair[0], pair[1]) } else { (pair[1], pair[0]) };
        if !(b.bitrate_kbps > a.bitrate_kbps) {
            bail!(Argument, "{which} curve bitrates are not strictly monotone");
        }
        if !(b.psnr_db > a.psnr_db) {
            bail!(
                Argument,
                "{which} curve PSNR is not strictly increasing with bitrate ({} dB at {} kbps, {} dB at {} kbps)",
                a.psnr_db,
                a.bitrate_kbps,
                b.psnr_db,
                b.bitrate_kbps
            );
        }
    }
    Ok(())
}

/// Solves a 4x4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            bail!(Numeric, "singular cubic fit");
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Least-squares cubic of `log10(rate)` against PSNR.
pub fn fit_log_rate(points: &[RdPoint]) -> Result<Cubic> {
    validate(points, "RD")?;
    let xs: Vec<f64> = points.iter().map(|p| p.psnr_db).collect();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(1e-12);
    let mut ata = [[0.0; 4]; 4];
    let mut aty = [0.0; 4];
    for p in points {
        let u = (p.psnr_db - center) / scale;
        let row = [1.0, u, u * u, u * u * u];
        let y = libm::log10(p.bitrate_kbps);
        for i in 0..4 {
            aty[i] += row[i] * y;
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let coeffs = solve4(ata, aty)?;
    Ok(Cubic { coeffs, center, scale })
}

fn psnr_range(points: &[RdPoint]) -> (f64, f64) {
    points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.psnr_db), h.max(p.psnr_db)))
}

/// BD-rate of `test` relative to `anchor`, in percent.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    validate(anchor, "anchor")?;
    validate(test, "test")?;
    let fa = fit_log_rate(anchor)?;
    let ft = fit_log_rate(test)?;
    let (a_lo, a_hi) = psnr_range(anchor);
    let (t_lo, t_hi) = psnr_range(test);
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if !(hi > lo) {
        return Err(crate::Error::Overlap { lo, hi });
    }
    let diff = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((libm::pow(10.0, diff) - 1.0) * 100.0)
}
