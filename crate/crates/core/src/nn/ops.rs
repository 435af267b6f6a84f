//! Forward and adjoint kernels for the layers the network is built from.
//!
//! Convolutions work on zero-padded planes whose rows are `W + 2*pad` wide,
//! so every filter tap becomes one contiguous axpy over the whole plane.
//! The extra columns produce garbage that is cropped away, and the
//! matching columns of the output gradient are zeroed before the adjoint.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::FeatureMap;
use crate::error::{bail, Result};
use crate::Scalar;

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for i in 0..8 {
            acc[i] = acc[i] + a[i] * b[i];
        }
    }
    let mut s = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        s = s + *a * *b;
    }
    acc.iter().fold(s, |s, &v| s + v)
}

/// Geometry of a zero-padded working buffer for one plane.
#[derive(Clone, Copy)]
struct Padded {
    h: usize,
    w: usize,
    pad: usize,
}

impl Padded {
    #[inline]
    fn wp(&self) -> usize {
        self.w + 2 * self.pad
    }
    /// Length of one padded plane, including slack so the last tap of the
    /// last garbage column stays in bounds.
    #[inline]
    fn len(&self) -> usize {
        (self.h + 2 * self.pad) * self.wp() + 2 * self.pad
    }
    /// Length of one wide output plane.
    #[inline]
    fn wide(&self) -> usize {
        self.h * self.wp()
    }
    fn pad_plane<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let wp = self.wp();
        for y in 0..self.h {
            let o = (y + self.pad) * wp + self.pad;
            dst[o..o + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
        }
    }
    fn crop<T: Scalar>(&self, wide: &[T], dst: &mut [T]) {
        let wp = self.wp();
        for y in 0..self.h {
            dst[y * self.w..(y + 1) * self.w].copy_from_slice(&wide[y * wp..y * wp + self.w]);
        }
    }
    /// Copies an unpadded plane into the wide layout with zeroed extra columns.
    fn widen<T: Scalar>(&self, src: &[T], dst: &mut [T]) {
        let wp = self.wp();
        for y in 0..self.h {
            dst[y * wp..y * wp + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
            for v in &mut dst[y * wp + self.w..(y + 1) * wp] {
                *v = T::zero();
            }
        }
    }
    fn unpad<T: Scalar>(&self, padded: &[T], dst: &mut [T]) {
        let wp = self.wp();
        for y in 0..self.h {
            let o = (y + self.pad) * wp + self.pad;
            for (d, &s) in dst[y * self.w..(y + 1) * self.w].iter_mut().zip(&padded[o..o + self.w]) {
                *d = *d + s;
            }
        }
    }
    #[inline]
    fn tap_offset(&self, ky: usize, kx: usize, dil: usize) -> usize {
        ky * dil * self.wp() + kx * dil
    }
}

/// Static description of a convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub dil: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
    fn pad(&self) -> usize {
        self.dil * (self.k - 1) / 2
    }
}

fn padded_input<T: Scalar>(x: &FeatureMap<T>, geo: Padded) -> Vec<T> {
    let len = geo.len();
    let mut buf = vec![T::zero(); len * x.channels];
    for c in 0..x.channels {
        geo.pad_plane(x.plane(c), &mut buf[c * len..(c + 1) * len]);
    }
    buf
}

/// Stride-1 "same" convolution with zero padding; weights are
/// `[cout][cin][k][k]`.
pub fn conv2d<T: Scalar>(x: &FeatureMap<T>, w: &[T], b: Option<&[T]>, s: ConvShape) -> FeatureMap<T> {
    debug_assert_eq!(x.channels, s.cin);
    debug_assert_eq!(w.len(), s.weight_len());
    let geo = Padded { h: x.height, w: x.width, pad: s.pad() };
    let xp = padded_input(x, geo);
    let (plen, wide) = (geo.len(), geo.wide());
    let kk = s.k * s.k;
    let mut out = FeatureMap::zeros(s.cout, x.height, x.width);
    let mut acc = vec![T::zero(); wide];
    for o in 0..s.cout {
        let bias = b.map_or(T::zero(), |b| b[o]);
        acc.iter_mut().for_each(|v| *v = bias);
        for i in 0..s.cin {
            let xi = &xp[i * plen..(i + 1) * plen];
            let wk = &w[(o * s.cin + i) * kk..(o * s.cin + i + 1) * kk];
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let wv = wk[ky * s.k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let off = geo.tap_offset(ky, kx, s.dil);
                    axpy(wv, &xi[off..off + wide], &mut acc);
                }
            }
        }
        geo.crop(&acc, out.plane_mut(o));
    }
    out
}

/// Adjoint of [`conv2d`]. Accumulates into `gw`, `gb` and (optionally) `gx`.
pub fn conv2d_backward<T: Scalar>(
    x: &FeatureMap<T>,
    w: &[T],
    s: ConvShape,
    gout: &FeatureMap<T>,
    gx: Option<&mut [T]>,
    gw: &mut [T],
    gb: Option<&mut [T]>,
) {
    let geo = Padded { h: x.height, w: x.width, pad: s.pad() };
    let (plen, wide) = (geo.len(), geo.wide());
    let kk = s.k * s.k;
    let mut gwide = vec![T::zero(); wide * s.cout];
    for o in 0..s.cout {
        geo.widen(gout.plane(o), &mut gwide[o * wide..(o + 1) * wide]);
    }
    if let Some(gb) = gb {
        for o in 0..s.cout {
            gb[o] = gb[o] + gout.plane(o).iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    let xp = padded_input(x, geo);
    for o in 0..s.cout {
        let g = &gwide[o * wide..(o + 1) * wide];
        for i in 0..s.cin {
            let xi = &xp[i * plen..(i + 1) * plen];
            let base = (o * s.cin + i) * kk;
            for ky in 0..s.k {
                for kx in 0..s.k {
                    let off = geo.tap_offset(ky, kx, s.dil);
                    let idx = base + ky * s.k + kx;
                    gw[idx] = gw[idx] + dot(g, &xi[off..off + wide]);
                }
            }
        }
    }
    if let Some(gx) = gx {
        let mut gp = vec![T::zero(); plen];
        let n = x.plane_len();
        for i in 0..s.cin {
            gp.iter_mut().for_each(|v| *v = T::zero());
            for o in 0..s.cout {
                let g = &gwide[o * wide..(o + 1) * wide];
                let base = (o * s.cin + i) * kk;
                for ky in 0..s.k {
                    for kx in 0..s.k {
                        let wv = w[base + ky * s.k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let off = geo.tap_offset(ky, kx, s.dil);
                        axpy(wv, g, &mut gp[off..off + wide]);
                    }
                }
            }
            geo.unpad(&gp, &mut gx[i * n..(i + 1) * n]);
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// 2x average pooling; odd trailing rows/columns average the samples that exist.
pub fn avg_pool2<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h2, w2) = (x.height.div_ceil(2), x.width.div_ceil(2));
    let mut out = FeatureMap::zeros(x.channels, h2, w2);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut s = T::zero();
                let mut n = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                        if sy < x.height && sx < x.width {
                            s = s + src[sy * x.width + sx];
                            n += 1;
                        }
                    }
                }
                dst[y * w2 + xx] = s / T::from_f64(n as f64);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(x_shape: (usize, usize, usize), gout: &FeatureMap<T>, gx: &mut [T]) {
    let (ch, h, w) = x_shape;
    let (h2, w2) = (gout.height, gout.width);
    for c in 0..ch {
        let g = gout.plane(c);
        let dst = &mut gx[c * h * w..(c + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                let ny = if 2 * y + 1 < h { 2 } else { 1 };
                let nx = if 2 * xx + 1 < w { 2 } else { 1 };
                let share = g[y * w2 + xx] / T::from_f64((ny * nx) as f64);
                for dy in 0..ny {
                    for dx in 0..nx {
                        let i = (2 * y + dy) * w + 2 * xx + dx;
                        dst[i] = dst[i] + share;
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling to an explicit target size.
pub fn upsample2<T: Scalar>(x: &FeatureMap<T>, h: usize, w: usize) -> FeatureMap<T> {
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = (y / 2).min(x.height - 1);
            for xx in 0..w {
                dst[y * w + xx] = src[sy * x.width + (xx / 2).min(x.width - 1)];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(x_shape: (usize, usize, usize), gout: &FeatureMap<T>, gx: &mut [T]) {
    let (ch, hs, ws) = x_shape;
    let (h, w) = (gout.height, gout.width);
    for c in 0..ch {
        let g = gout.plane(c);
        let dst = &mut gx[c * hs * ws..(c + 1) * hs * ws];
        for y in 0..h {
            let sy = (y / 2).min(hs - 1);
            for xx in 0..w {
                let i = sy * ws + (xx / 2).min(ws - 1);
                dst[i] = dst[i] + g[y * w + xx];
            }
        }
    }
}

/// Mirror index without edge repetition (`d c b | a b c d | c b a`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Normalized Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel<T: Scalar>(sigma: f64) -> Vec<T> {
    let r = libm::ceil(3.0 * sigma) as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::from_f64(v / total)).collect()
}

fn blur_pass<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &[T], horizontal: bool, adjoint: bool) {
    let r = (kernel.len() / 2) as isize;
    let (n, other) = if horizontal { (w, h) } else { (h, w) };
    let at = |line: usize, i: usize| if horizontal { line * w + i } else { i * w + line };
    for line in 0..other {
        for i in 0..n {
            for (j, &kv) in kernel.iter().enumerate() {
                let s = reflect(i as isize + j as isize - r, n);
                if adjoint {
                    let d = at(line, s);
                    dst[d] = dst[d] + kv * src[at(line, i)];
                } else {
                    let d = at(line, i);
                    dst[d] = dst[d] + kv * src[at(line, s)];
                }
            }
        }
    }
}

/// Separable Gaussian blur with reflect padding, channel by channel.
pub fn gaussian_blur<T: Scalar>(x: &FeatureMap<T>, kernel: &[T]) -> FeatureMap<T> {
    let (h, w) = (x.height, x.width);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    let mut tmp = vec![T::zero(); h * w];
    for c in 0..x.channels {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        blur_pass(x.plane(c), &mut tmp, h, w, kernel, true, false);
        blur_pass(&tmp, out.plane_mut(c), h, w, kernel, false, false);
    }
    out
}

pub fn gaussian_blur_backward<T: Scalar>(gout: &FeatureMap<T>, kernel: &[T], gx: &mut [T]) {
    let (h, w) = (gout.height, gout.width);
    let mut tmp = vec![T::zero(); h * w];
    for c in 0..gout.channels {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        blur_pass(gout.plane(c), &mut tmp, h, w, kernel, false, true);
        blur_pass(&tmp, &mut gx[c * h * w..(c + 1) * h * w], h, w, kernel, true, true);
    }
}

/// Bilinear read of one plane at a fractional position; zero outside.
/// Returns the value and its derivatives with respect to `py` and `px`.
#[inline]
fn bilinear<T: Scalar>(plane: &[T], h: usize, w: usize, py: T, px: T) -> (T, T, T) {
    let y0f = py.floor();
    let x0f = px.floor();
    let fy = py - y0f;
    let fx = px - x0f;
    let y0 = y0f.as_f64() as isize;
    let x0 = x0f.as_f64() as isize;
    let get = |y: isize, x: isize| {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            plane[y as usize * w + x as usize]
        } else {
            T::zero()
        }
    };
    let (v00, v01, v10, v11) = (get(y0, x0), get(y0, x0 + 1), get(y0 + 1, x0), get(y0 + 1, x0 + 1));
    let one = T::one();
    let v = (one - fy) * ((one - fx) * v00 + fx * v01) + fy * ((one - fx) * v10 + fx * v11);
    let dy = (one - fx) * (v10 - v00) + fx * (v11 - v01);
    let dx = (one - fy) * (v01 - v00) + fy * (v11 - v10);
    (v, dy, dx)
}

#[inline]
fn bilinear_scatter<T: Scalar>(plane: &mut [T], h: usize, w: usize, py: T, px: T, g: T) {
    let y0f = py.floor();
    let x0f = px.floor();
    let fy = py - y0f;
    let fx = px - x0f;
    let y0 = y0f.as_f64() as isize;
    let x0 = x0f.as_f64() as isize;
    let one = T::one();
    for (yy, xx, wt) in [
        (y0, x0, (one - fy) * (one - fx)),
        (y0, x0 + 1, (one - fy) * fx),
        (y0 + 1, x0, fy * (one - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ] {
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            let i = yy as usize * w + xx as usize;
            plane[i] = plane[i] + wt * g;
        }
    }
}

/// Static description of a deformable convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformShape {
    pub channels: usize,
    pub cout: usize,
    pub k: usize,
    pub groups: usize,
}

impl DeformShape {
    pub fn taps(&self) -> usize {
        self.k * self.k
    }
    pub fn weight_len(&self) -> usize {
        self.cout * self.channels * self.taps()
    }
    pub fn offset_channels(&self) -> usize {
        2 * self.groups * self.taps()
    }
    pub fn mask_channels(&self) -> usize {
        self.groups * self.taps()
    }
}

fn check_deform<T: Scalar>(x: &FeatureMap<T>, off: &FeatureMap<T>, mask: &FeatureMap<T>, w: &[T], s: DeformShape) -> Result<()> {
    if s.k % 2 == 0 || s.groups == 0 || x.channels != s.channels || s.channels % s.groups != 0 {
        bail!(
            Argument,
            "deformable sampling needs odd kernel and channels ({}) divisible by groups ({})",
            x.channels,
            s.groups
        );
    }
    if off.channels != s.offset_channels() || off.height != x.height || off.width != x.width {
        bail!(
            Argument,
            "offset field {:?} does not match feature {}x{} with {} offset channels",
            off.shape(),
            x.height,
            x.width,
            s.offset_channels()
        );
    }
    if mask.channels != s.mask_channels() || mask.height != x.height || mask.width != x.width {
        bail!(Argument, "mask field {:?} does not match feature {}x{}", mask.shape(), x.height, x.width);
    }
    if w.len() != s.weight_len() {
        bail!(Argument, "deformable weight has {} values, expected {}", w.len(), s.weight_len());
    }
    Ok(())
}

/// Sampling positions for tap `k` of group `g` at every pixel.
#[inline]
fn tap_position<T: Scalar>(off: &FeatureMap<T>, s: DeformShape, g: usize, tap: usize, p: usize, wdt: usize) -> (T, T) {
    let half = (s.k / 2) as f64;
    let (y, x) = (p / wdt, p % wdt);
    let ky = (tap / s.k) as f64 - half;
    let kx = (tap % s.k) as f64 - half;
    let oc = 2 * (g * s.taps() + tap);
    let n = off.plane_len();
    let dy = off.values[oc * n + p];
    let dx = off.values[(oc + 1) * n + p];
    (T::from_f64(y as f64 + ky) + dy, T::from_f64(x as f64 + kx) + dx)
}

/// Modulated, bilinearly sampled columns `[channel][tap][pixel]`.
fn deform_columns<T: Scalar>(x: &FeatureMap<T>, off: &FeatureMap<T>, mask: &FeatureMap<T>, s: DeformShape) -> Vec<T> {
    let (h, w) = (x.height, x.width);
    let n = h * w;
    let kk = s.taps();
    let cpg = s.channels / s.groups;
    let mut cols = vec![T::zero(); s.channels * kk * n];
    for g in 0..s.groups {
        for tap in 0..kk {
            let m = mask.plane(g * kk + tap);
            for p in 0..n {
                let (py, px) = tap_position(off, s, g, tap, p, w);
                for c in g * cpg..(g + 1) * cpg {
                    let (v, _, _) = bilinear(x.plane(c), h, w, py, px);
                    cols[(c * kk + tap) * n + p] = v * m[p];
                }
            }
        }
    }
    cols
}

fn deform_combine<T: Scalar>(cols: &[T], w: &[T], s: DeformShape, h: usize, wd: usize) -> FeatureMap<T> {
    let n = h * wd;
    let ck = s.channels * s.taps();
    let mut out = FeatureMap::zeros(s.cout, h, wd);
    for o in 0..s.cout {
        let dst = out.plane_mut(o);
        for j in 0..ck {
            let wv = w[o * ck + j];
            if wv != T::zero() {
                axpy(wv, &cols[j * n..(j + 1) * n], dst);
            }
        }
    }
    out
}

/// Modulated deformable convolution.
///
/// For every output pixel and kernel tap the input is read at
/// `pixel + tap + offset` by bilinear interpolation (zero outside the
/// frame), scaled by the tap's mask, and the taps are combined by the
/// weights `[cout][channels][k*k]`. Offsets are laid out per group and tap
/// as `(dy, dx)` channel pairs; masks as one channel per group and tap.
pub fn deformable_sample<T: Scalar>(
    feature: &FeatureMap<T>,
    offsets: &FeatureMap<T>,
    mask: &FeatureMap<T>,
    weight: &[T],
    shape: DeformShape,
) -> Result<FeatureMap<T>> {
    check_deform(feature, offsets, mask, weight, shape)?;
    let cols = deform_columns(feature, offsets, mask, shape);
    Ok(deform_combine(&cols, weight, shape, feature.height, feature.width))
}

pub(crate) fn deform_forward<T: Scalar>(
    x: &FeatureMap<T>,
    off: &FeatureMap<T>,
    mask: &FeatureMap<T>,
    w: &[T],
    s: DeformShape,
) -> Result<(FeatureMap<T>, Vec<T>)> {
    check_deform(x, off, mask, w, s)?;
    let cols = deform_columns(x, off, mask, s);
    let out = deform_combine(&cols, w, s, x.height, x.width);
    Ok((out, cols))
}

/// Gradients of a deformable convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn deform_backward<T: Scalar>(
    x: &FeatureMap<T>,
    off: &FeatureMap<T>,
    mask: &FeatureMap<T>,
    w: &[T],
    s: DeformShape,
    cols: &[T],
    gout: &FeatureMap<T>,
    gx: &mut [T],
    goff: &mut [T],
    gmask: &mut [T],
    gw: &mut [T],
) {
    let (h, wd) = (x.height, x.width);
    let n = h * wd;
    let kk = s.taps();
    let ck = s.channels * kk;
    let cpg = s.channels / s.groups;
    let mut gcols = vec![T::zero(); ck * n];
    for o in 0..s.cout {
        let g = gout.plane(o);
        for j in 0..ck {
            let idx = o * ck + j;
            gw[idx] = gw[idx] + dot(g, &cols[j * n..(j + 1) * n]);
            let wv = w[idx];
            if wv != T::zero() {
                axpy(wv, g, &mut gcols[j * n..(j + 1) * n]);
            }
        }
    }
    for g in 0..s.groups {
        for tap in 0..kk {
            let mc = g * kk + tap;
            let oc = 2 * mc;
            for p in 0..n {
                let m = mask.values[mc * n + p];
                let (py, px) = tap_position(off, s, g, tap, p, wd);
                let (mut gm, mut gy, mut gxo) = (T::zero(), T::zero(), T::zero());
                for c in g * cpg..(g + 1) * cpg {
                    let gc = gcols[(c * kk + tap) * n + p];
                    if gc == T::zero() {
                        continue;
                    }
                    let (v, dy, dx) = bilinear(x.plane(c), h, wd, py, px);
                    gm = gm + gc * v;
                    let gs = gc * m;
                    gy = gy + gs * dy;
                    gxo = gxo + gs * dx;
                    bilinear_scatter(&mut gx[c * n..(c + 1) * n], h, wd, py, px, gs);
                }
                gmask[mc * n + p] = gmask[mc * n + p] + gm;
                goff[oc * n + p] = goff[oc * n + p] + gy;
                goff[(oc + 1) * n + p] = goff[(oc + 1) * n + p] + gxo;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, a: f64, b: f64, c: f64) -> FeatureMap<f64> {
        let values = (0..h * w).map(|i| a * (i / w) as f64 + b * (i % w) as f64 + c).collect();
        FeatureMap::from_values(1, h, w, values).unwrap()
    }

    fn seeded(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let values = (0..c * h * w)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        FeatureMap::from_values(c, h, w, values).unwrap()
    }

    /// Direct-summation convolution oracle.
    fn conv_direct(x: &FeatureMap<f64>, w: &[f64], b: &[f64], s: ConvShape) -> FeatureMap<f64> {
        let pad = s.pad() as isize;
        let mut out = FeatureMap::zeros(s.cout, x.height, x.width);
        for o in 0..s.cout {
            for y in 0..x.height {
                for xx in 0..x.width {
                    let mut acc = b[o];
                    for i in 0..s.cin {
                        for ky in 0..s.k {
                            for kx in 0..s.k {
                                let sy = y as isize + (ky * s.dil) as isize - pad;
                                let sx = xx as isize + (kx * s.dil) as isize - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < x.height && (sx as usize) < x.width {
                                    acc += w[((o * s.cin + i) * s.k + ky) * s.k + kx] * x.at(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.values[(o * x.height + y) * x.width + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        for (k, dil) in [(1, 1), (3, 1), (3, 2)] {
            let s = ConvShape { cin: 3, cout: 2, k, dil };
            let x = seeded(3, 7, 9, 1);
            let w = seeded(1, 1, s.weight_len(), 2).values;
            let b = [0.25, -0.5];
            let fast = conv2d(&x, &w, Some(&b), s);
            let slow = conv_direct(&x, &w, &b, s);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "k={k} dil={dil}");
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> for the input, and likewise for weights.
        let s = ConvShape { cin: 2, cout: 3, k: 3, dil: 2 };
        let x = seeded(2, 6, 5, 3);
        let w = seeded(1, 1, s.weight_len(), 4).values;
        let g = seeded(3, 6, 5, 5);
        let y = conv2d(&x, &w, None, s);
        let mut gx = vec![0.0; x.values.len()];
        let mut gw = vec![0.0; w.len()];
        conv2d_backward(&x, &w, s, &g, Some(&mut gx), &mut gw, None);
        let lhs: f64 = y.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
        let rhs_x: f64 = x.values.iter().zip(&gx).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_are_adjoint_pairs() {
        for (h, w) in [(6, 4), (5, 7)] {
            let x = seeded(2, h, w, 7);
            let p = avg_pool2(&x);
            let g = seeded(2, p.height, p.width, 8);
            let mut gx = vec![0.0; x.values.len()];
            avg_pool2_backward(x.shape(), &g, &mut gx);
            let lhs: f64 = p.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.values.iter().zip(&gx).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);

            let u = upsample2(&p, h, w);
            let gu = seeded(2, h, w, 9);
            let mut gp = vec![0.0; p.values.len()];
            upsample2_backward(p.shape(), &gu, &mut gp);
            let lhs: f64 = u.values.iter().zip(&gu.values).map(|(a, b)| a * b).sum();
            let rhs: f64 = p.values.iter().zip(&gp).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_adjoint_and_constant_preserving() {
        let k: Vec<f64> = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        let c = FeatureMap::filled(1, 4, 5, 3.5);
        assert!(gaussian_blur(&c, &k).max_abs_diff(&c) < 1e-12);
        let x = seeded(2, 5, 6, 10);
        let g = seeded(2, 5, 6, 11);
        let y = gaussian_blur(&x, &k);
        let mut gx = vec![0.0; x.values.len()];
        gaussian_blur_backward(&g, &k, &mut gx);
        let lhs: f64 = y.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.values.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    fn identity_weight(c: usize, taps: usize, center: usize) -> Vec<f64> {
        let mut w = vec![0.0; c * c * taps];
        for o in 0..c {
            w[(o * c + o) * taps + center] = 1.0;
        }
        w
    }

    #[test]
    fn zero_offsets_reduce_to_convolution() {
        let s = DeformShape { channels: 2, cout: 3, k: 3, groups: 2 };
        let x = seeded(2, 5, 6, 12);
        let w = seeded(1, 1, s.weight_len(), 13).values;
        let off = FeatureMap::zeros(s.offset_channels(), 5, 6);
        let mask = FeatureMap::filled(s.mask_channels(), 5, 6, 1.0);
        let got = deformable_sample(&x, &off, &mask, &w, s).unwrap();
        let conv = conv2d(&x, &w, None, ConvShape { cin: 2, cout: 3, k: 3, dil: 1 });
        assert!(got.max_abs_diff(&conv) < 1e-12);
    }

    #[test]
    fn integer_offset_shifts_by_one_column() {
        let s = DeformShape { channels: 1, cout: 1, k: 1, groups: 1 };
        let x = seeded(1, 4, 5, 14);
        let mut off = FeatureMap::zeros(2, 4, 5);
        off.plane_mut(1).iter_mut().for_each(|v| *v = 1.0);
        let mask = FeatureMap::filled(1, 4, 5, 1.0);
        let got = deformable_sample(&x, &off, &mask, &[1.0], s).unwrap();
        for y in 0..4 {
            for c in 0..5 {
                let expect = if c + 1 < 5 { x.at(0, y, c + 1) } else { 0.0 };
                assert_eq!(got.at(0, y, c), expect);
            }
        }
    }

    #[test]
    fn fractional_offset_on_ramp_is_midpoint() {
        let s = DeformShape { channels: 1, cout: 1, k: 1, groups: 1 };
        let x = ramp(4, 6, 0.0, 2.0, 1.0);
        let mut off = FeatureMap::zeros(2, 4, 6);
        off.plane_mut(1).iter_mut().for_each(|v| *v = 0.5);
        let mask = FeatureMap::filled(1, 4, 6, 1.0);
        let got = deformable_sample(&x, &off, &mask, &identity_weight(1, 1, 0), s).unwrap();
        for y in 0..4 {
            for c in 0..5 {
                let mid = 0.5 * (x.at(0, y, c) + x.at(0, y, c + 1));
                assert!((got.at(0, y, c) - mid).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deform_shape_errors() {
        let s = DeformShape { channels: 2, cout: 1, k: 3, groups: 2 };
        let x = seeded(2, 4, 4, 1);
        let off = FeatureMap::zeros(s.offset_channels(), 3, 4);
        let mask = FeatureMap::filled(s.mask_channels(), 4, 4, 1.0);
        let w = vec![0.0; s.weight_len()];
        assert!(deformable_sample(&x, &off, &mask, &w, s).is_err());
    }

    #[test]
    fn deform_gradients_match_finite_differences() {
        let s = DeformShape { channels: 2, cout: 2, k: 3, groups: 1 };
        let x = seeded(2, 5, 5, 20);
        let mut off = seeded(s.offset_channels(), 5, 5, 21);
        off.values.iter_mut().for_each(|v| *v *= 1.3);
        let mask = seeded(s.mask_channels(), 5, 5, 22);
        let w = seeded(1, 1, s.weight_len(), 23).values;
        let g = seeded(2, 5, 5, 24);
        let objective = |x: &FeatureMap<f64>, off: &FeatureMap<f64>, mask: &FeatureMap<f64>, w: &[f64]| -> f64 {
            let y = deformable_sample(x, off, mask, w, s).unwrap();
            y.values.iter().zip(&g.values).map(|(a, b)| a * b).sum()
        };
        let (_, cols) = deform_forward(&x, &off, &mask, &w, s).unwrap();
        let mut gx = vec![0.0; x.values.len()];
        let mut goff = vec![0.0; off.values.len()];
        let mut gm = vec![0.0; mask.values.len()];
        let mut gw = vec![0.0; w.len()];
        deform_backward(&x, &off, &mask, &w, s, &cols, &g, &mut gx, &mut goff, &mut gm, &mut gw);
        let h = 1e-6;
        for i in (0..off.values.len()).step_by(7) {
            let mut a = off.clone();
            a.values[i] += h;
            let mut b = off.clone();
            b.values[i] -= h;
            let fd = (objective(&x, &a, &mask, &w) - objective(&x, &b, &mask, &w)) / (2.0 * h);
            assert!((fd - goff[i]).abs() < 1e-6, "offset {i}: fd {fd} vs {}", goff[i]);
        }
        for i in (0..x.values.len()).step_by(3) {
            let mut a = x.clone();
            a.values[i] += h;
            let mut b = x.clone();
            b.values[i] -= h;
            let fd = (objective(&a, &off, &mask, &w) - objective(&b, &off, &mask, &w)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6);
        }
        for i in (0..mask.values.len()).step_by(5) {
            let mut a = mask.clone();
            a.values[i] += h;
            let mut b = mask.clone();
            b.values[i] -= h;
            let fd = (objective(&x, &off, &a, &w) - objective(&x, &off, &b, &w)) / (2.0 * h);
            assert!((fd - gm[i]).abs() < 1e-6);
        }
    }
}
