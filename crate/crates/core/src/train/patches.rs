use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::frame::{Plane, Sequence};
use crate::nn::FeatureMap;
use crate::Scalar;

/// A raw target patch and its co-located decoded window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample<T> {
    /// Raw luma crop in `[0, 1]`.
    pub target: FeatureMap<T>,
    /// `2R+1` decoded luma crops, centre frame in the middle.
    pub window: Vec<FeatureMap<T>>,
    pub size: usize,
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

impl<T: Scalar> TrainingSample<T> {
    pub fn center(&self) -> usize {
        self.window.len() / 2
    }

    pub fn cast<U: Scalar>(&self) -> TrainingSample<U> {
        TrainingSample {
            target: self.target.cast(),
            window: self.window.iter().map(FeatureMap::cast).collect(),
            size: self.size,
            frame: self.frame,
            row: self.row,
            col: self.col,
        }
    }
}

fn crop<T: Scalar>(p: &Plane, row: usize, col: usize, size: usize) -> FeatureMap<T> {
    let max = p.max_value() as f64;
    let mut values = Vec::with_capacity(size * size);
    for y in row..row + size {
        let line = &p.samples()[y * p.width() + col..y * p.width() + col + size];
        values.extend(line.iter().map(|&s| T::from_f64(s as f64 / max)));
    }
    FeatureMap { channels: 1, height: size, width: size, values }
}

/// Cuts every frame into `size x size` crops on a `stride` grid and
/// returns them in a seeded random order. Windows at the clip ends
/// repeat the first or last frame.
pub fn make_patches<T: Scalar>(
    raw: &Sequence,
    decoded: &Sequence,
    size: usize,
    stride: usize,
    radius: usize,
    seed: u64,
) -> Result<Vec<TrainingSample<T>>> {
    if !raw.matches(decoded) || raw.len() != decoded.len() {
        bail!(
            Pairing,
            "raw {}x{}x{} and decoded {}x{}x{} sequences differ",
            raw.width(),
            raw.height(),
            raw.len(),
            decoded.width(),
            decoded.height(),
            decoded.len()
        );
    }
    if size == 0 || stride == 0 {
        bail!(Argument, "patch size and stride must be positive");
    }
    if size > raw.width() || size > raw.height() {
        bail!(Argument, "patch size {size} exceeds frame size {}x{}", raw.width(), raw.height());
    }
    let n = raw.len();
    let rows: Vec<usize> = (0..=raw.height() - size).step_by(stride).collect();
    let cols: Vec<usize> = (0..=raw.width() - size).step_by(stride).collect();
    let mut out = Vec::with_capacity(n * rows.len() * cols.len());
    for t in 0..n {
        for &row in &rows {
            for &col in &cols {
                let window = (-(radius as isize)..=radius as isize)
                    .map(|d| {
                        let j = (t as isize + d).clamp(0, n as isize - 1) as usize;
                        crop(&decoded.frames()[j].y, row, col, size)
                    })
                    .collect();
                out.push(TrainingSample { target: crop(&raw.frames()[t].y, row, col, size), window, size, frame: t, row, col });
            }
        }
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}
