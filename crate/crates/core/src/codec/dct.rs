use core::f64::consts::PI;

use crate::error::{bail, Result};

/// 8x8 block, row-major.
pub type Block8 = [f64; 64];

fn basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (k, row) in c.iter_mut().enumerate() {
        let alpha = if k == 0 { libm::sqrt(1.0 / 8.0) } else { 0.5 };
        for (n, v) in row.iter_mut().enumerate() {
            *v = alpha * libm::cos(PI * (2 * n + 1) as f64 * k as f64 / 16.0);
        }
    }
    c
}

fn check(block: &[f64]) -> Result<()> {
    if block.len() != 64 {
        bail!(Argument, "DCT block must hold 64 values, got {}", block.len());
    }
    Ok(())
}

/// Orthonormal 2-D DCT-II.
pub fn dct8_forward(block: &[f64]) -> Result<Block8> {
    check(block)?;
    let c = basis();
    let mut tmp = [0.0; 64];
    // rows
    for y in 0..8 {
        for k in 0..8 {
            tmp[y * 8 + k] = (0..8).map(|n| c[k][n] * block[y * 8 + n]).sum();
        }
    }
    let mut out = [0.0; 64];
    for x in 0..8 {
        for k in 0..8 {
            out[k * 8 + x] = (0..8).map(|n| c[k][n] * tmp[n * 8 + x]).sum();
        }
    }
    Ok(out)
}

/// Orthonormal 2-D DCT-III, the inverse of [`dct8_forward`].
pub fn dct8_inverse(coeffs: &[f64]) -> Result<Block8> {
    check(coeffs)?;
    let c = basis();
    let mut tmp = [0.0; 64];
    for x in 0..8 {
        for n in 0..8 {
            tmp[n * 8 + x] = (0..8).map(|k| c[k][n] * coeffs[k * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for n in 0..8 {
            out[y * 8 + n] = (0..8).map(|k| c[k][n] * tmp[y * 8 + k]).sum();
        }
    }
    Ok(out)
}
