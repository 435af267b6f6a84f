//! Complementary Gaussian band split used by the omni-frequency blocks.

use super::ops::{gaussian_blur, gaussian_kernel};
use super::tensor::FeatureMap;
use crate::error::{bail, Result};
use crate::Scalar;

pub const SIGMA_SMALL: f64 = 1.0;
pub const SIGMA_LARGE: f64 = 2.0;
pub const MIN_BAND_SIZE: usize = 4;

/// Low, mid and high frequency parts of a feature map.
#[derive(Debug, Clone)]
pub struct Bands<T> {
    pub low: FeatureMap<T>,
    pub mid: FeatureMap<T>,
    pub high: FeatureMap<T>,
}

/// Splits `feature` into `low = G2 * f`, `mid = G1 * f - G2 * f` and
/// `high = f - G1 * f`, so the three bands sum back to the input.
pub fn frequency_decompose<T: Scalar>(feature: &FeatureMap<T>) -> Result<Bands<T>> {
    if feature.height < MIN_BAND_SIZE || feature.width < MIN_BAND_SIZE {
        bail!(
            Argument,
            "band split needs at least {MIN_BAND_SIZE}x{MIN_BAND_SIZE}, got {}x{}",
            feature.height,
            feature.width
        );
    }
    let low = gaussian_blur(feature, &gaussian_kernel::<T>(SIGMA_LARGE));
    let small = gaussian_blur(feature, &gaussian_kernel::<T>(SIGMA_SMALL));
    let mut mid = small.clone();
    for (m, &l) in mid.values.iter_mut().zip(&low.values) {
        *m = *m - l;
    }
    let mut high = feature.clone();
    for (h, &s) in high.values.iter_mut().zip(&small.values) {
        *h = *h - s;
    }
    Ok(Bands { low, mid, high })
}
