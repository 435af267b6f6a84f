//! The enhancement network.
//!
//! Per frame, a U-shaped multi-scale extractor with selective-kernel
//! gating turns normalized luma into features. The window of `2R+1`
//! feature maps is aligned to the centre frame by deformable sampling and
//! fused by a 1x1 projection (spatio-temporal fusion). The fused features
//! then go through `N` rounds of grid propagation, each a backward sweep
//! followed by a forward sweep whose steps align the neighbouring hidden
//! state and enhance it with an omni-frequency block. A final stack of
//! omni-frequency blocks and a 3x3 head predict a luma residual.

use alloc::vec::Vec;

use super::config::ModelConfig;
use super::freq::{SIGMA_LARGE, SIGMA_SMALL};
use super::tape::{Tape, Var};
use super::tensor::FeatureMap;
use super::weights::{AlignP, ConvP, EbP, OfaeP, SkP, Weights};
use crate::error::{bail, Result};
use crate::frame::{Plane, Sequence};
use crate::Scalar;

fn conv<T: Scalar>(t: &mut Tape<'_, T>, x: Var, p: &ConvP) -> Var {
    t.conv(x, p.w, p.b, p.shape)
}

fn conv_act<T: Scalar>(t: &mut Tape<'_, T>, x: Var, p: &ConvP) -> Var {
    let y = conv(t, x, p);
    t.leaky_relu(y)
}

fn sk_unit<T: Scalar>(t: &mut Tape<'_, T>, x: Var, p: &SkP) -> Var {
    let a = conv_act(t, x, &p.branch_a);
    let b = conv_act(t, x, &p.branch_b);
    let u = t.add(a, b);
    let s = t.global_avg(u);
    let z = conv_act(t, s, &p.squeeze);
    let za = conv(t, z, &p.select_a);
    let zb = conv(t, z, &p.select_b);
    t.sk_mix(a, b, za, zb)
}

/// Multi-scale per-frame features: 1 channel in, C channels out.
pub(crate) fn sku<T: Scalar>(t: &mut Tape<'_, T>, frame: Var) -> Var {
    let p = &t.weights().layout.sku;
    let e0 = conv_act(t, frame, &p.head);
    let p0 = t.avg_pool2(e0);
    let e1 = sk_unit(t, p0, &p.sk1);
    let p1 = t.avg_pool2(e1);
    let e2 = sk_unit(t, p1, &p.sk2);
    let u2 = t.upsample_like(e2, e1);
    let s1 = t.add(u2, e1);
    let d1 = conv_act(t, s1, &p.dec1);
    let u1 = t.upsample_like(d1, e0);
    let s0 = t.add(u1, e0);
    conv_act(t, s0, &p.dec0)
}

/// Deformably samples `feat` with offsets predicted from `[guide, feat]`.
fn align<T: Scalar>(t: &mut Tape<'_, T>, p: &AlignP, feat: Var, guide: Var) -> Result<Var> {
    let both = t.concat(&[guide, feat]);
    let hidden = conv_act(t, both, &p.hidden);
    let off = conv(t, hidden, &p.offset);
    let logits = conv(t, hidden, &p.mask);
    let mask = t.sigmoid(logits);
    t.deform(feat, off, mask, p.deform, p.deform_shape)
}

/// Aligned window features (empty for `R = 0`) and the fused feature.
pub(crate) fn stff<T: Scalar>(t: &mut Tape<'_, T>, window: &[Var]) -> Result<(Vec<Var>, Var)> {
    let layout = &t.weights().layout;
    let center = window[window.len() / 2];
    let aligned = match &layout.stff_align {
        None => Vec::new(),
        Some(p) => window.iter().map(|&f| align(t, p, f, center)).collect::<Result<Vec<_>>>()?,
    };
    let fused_in = if aligned.is_empty() { center } else { t.concat(&aligned) };
    let fused = conv(t, fused_in, &layout.stff_fuse);
    t.check_finite(fused, "spatio-temporal fusion")?;
    Ok((aligned, fused))
}

pub(crate) fn ofae<T: Scalar>(t: &mut Tape<'_, T>, p: &OfaeP, x: Var) -> Result<Var> {
    let low = t.blur(x, SIGMA_LARGE);
    let small = t.blur(x, SIGMA_SMALL);
    let mid = t.sub(small, low);
    let high = t.sub(x, small);
    let mut enhanced = [low; 3];
    for (i, band) in [low, mid, high].into_iter().enumerate() {
        let r = conv_act(t, band, &p.bands[i]);
        enhanced[i] = t.add(band, r);
    }
    let cat = t.concat(&enhanced);
    let fused = conv(t, cat, &p.fuse);
    let out = t.add(x, fused);
    t.check_finite(out, "omni-frequency enhancement")?;
    Ok(out)
}

fn zeros_like<T: Scalar>(t: &mut Tape<'_, T>, v: Var) -> Var {
    let (c, h, w) = t.value(v).shape();
    t.leaf(FeatureMap::zeros(c, h, w))
}

/// One enhancement-block step. `prev` is the neighbouring hidden state
/// (`None` at the sequence boundary, where it is a zero map and its
/// alignment is skipped: the deformable convolution has no bias, so the
/// aligned zero map is zero). `extra` is the backward state for forward
/// steps.
fn enhancement_step<T: Scalar>(
    t: &mut Tape<'_, T>,
    p: &EbP,
    f: Var,
    extra: Option<Var>,
    prev: Option<Var>,
) -> Result<Var> {
    let aligned = match prev {
        Some(s) => align(t, &p.align, s, f)?,
        None => zeros_like(t, f),
    };
    let inputs: Vec<Var> = match extra {
        Some(b) => [f, b, aligned].into(),
        None => [f, aligned].into(),
    };
    let cat = t.concat(&inputs);
    let z = conv_act(t, cat, &p.fuse);
    ofae(t, &p.ofae, z)
}

/// Index of the frame at temporal offset `d` from `i`, replicate-padded.
fn clamp_index(i: usize, d: isize, n: usize) -> usize {
    (i as isize + d).clamp(0, n as isize - 1) as usize
}

/// Training forward on one short clip held entirely on `t`; returns the
/// normalized prediction for frame `center`.
pub(crate) fn forward_clip<T: Scalar>(t: &mut Tape<'_, T>, frames: &[Var], center: usize) -> Result<Var> {
    let cfg = *t.weights().config();
    let layout = &t.weights().layout;
    let n = frames.len();
    let r = cfg.temporal_radius as isize;
    let feats: Vec<Var> = frames.iter().map(|&f| sku(t, f)).collect();
    let mut f = Vec::with_capacity(n);
    for j in 0..n {
        let window: Vec<Var> = (-r..=r).map(|d| feats[clamp_index(j, d, n)]).collect();
        f.push(stff(t, &window)?.1);
    }
    for (round, rp) in layout.rounds.iter().enumerate() {
        let last = round + 1 == layout.rounds.len();
        let mut b: Vec<Option<Var>> = alloc::vec![None; n];
        for i in (0..n).rev() {
            let prev = if i + 1 < n { b[i + 1] } else { None };
            b[i] = Some(enhancement_step(t, &rp.backward, f[i], None, prev)?);
        }
        let upto = if last { center + 1 } else { n };
        let mut h: Vec<Var> = Vec::with_capacity(n);
        for i in 0..upto {
            let prev = if i > 0 { Some(h[i - 1]) } else { None };
            h.push(enhancement_step(t, &rp.forward, f[i], b[i], prev)?);
        }
        f = h;
    }
    let mut x = f[center];
    for p in &layout.ofae {
        x = ofae(t, p, x)?;
    }
    let res = conv(t, x, &layout.head);
    let out = t.add(frames[center], res);
    t.check_finite(out, "reconstruction head")?;
    Ok(out)
}

fn check_config<T: Scalar>(weights: &Weights<T>, config: &ModelConfig) -> Result<()> {
    if !weights.config().same_architecture(config) {
        bail!(
            Load,
            "weights were built for {:?}, requested {:?}",
            weights.config(),
            config
        );
    }
    Ok(())
}

/// Intermediate results of spatio-temporal fusion for one window.
#[derive(Debug, Clone)]
pub struct StffOutput<T> {
    /// Per-frame multi-scale features.
    pub features: Vec<FeatureMap<T>>,
    /// Window features after deformable alignment (empty when `R = 0`).
    pub aligned: Vec<FeatureMap<T>>,
    /// The fused feature `f_t`.
    pub fused: FeatureMap<T>,
}

/// Fuses a window of `2R+1` normalized single-channel luma planes,
/// centred on the frame being enhanced.
pub fn stff_fuse<T: Scalar>(window: &[FeatureMap<T>], weights: &Weights<T>, config: &ModelConfig) -> Result<StffOutput<T>> {
    check_config(weights, config)?;
    if window.len() != config.window_len() {
        bail!(Argument, "window holds {} frames, expected {}", window.len(), config.window_len());
    }
    if window.iter().any(|w| w.channels != 1 || !w.same_shape(&window[0])) {
        bail!(Argument, "window frames must be single-channel planes of one size");
    }
    let mut t = Tape::new(weights, false);
    let feats: Vec<Var> = window
        .iter()
        .map(|w| {
            let leaf = t.leaf(w.clone());
            sku(&mut t, leaf)
        })
        .collect();
    let (aligned, fused) = stff(&mut t, &feats)?;
    Ok(StffOutput {
        features: feats.iter().map(|&v| t.value(v).clone()).collect(),
        aligned: aligned.iter().map(|&v| t.value(v).clone()).collect(),
        fused: t.value(fused).clone(),
    })
}

/// Applies final-stack omni-frequency block `block` to a hidden state.
pub fn ofae_enhance<T: Scalar>(hidden: &FeatureMap<T>, weights: &Weights<T>, block: usize) -> Result<FeatureMap<T>> {
    let layout = &weights.layout;
    let Some(p) = layout.ofae.get(block) else {
        bail!(Argument, "no omni-frequency block {block} (model has {})", layout.ofae.len());
    };
    if hidden.channels != weights.config().channels {
        bail!(Argument, "hidden state has {} channels, expected {}", hidden.channels, weights.config().channels);
    }
    super::freq::frequency_decompose(hidden)?;
    let mut t = Tape::new(weights, false);
    let x = t.leaf(hidden.clone());
    let out = ofae(&mut t, p, x)?;
    Ok(t.take(out))
}

/// Grid propagation over per-frame fused features; returns the hidden
/// states of the last round's forward sweep.
pub fn propagate_grid<T: Scalar>(
    features: &[FeatureMap<T>],
    weights: &Weights<T>,
    config: &ModelConfig,
) -> Result<Vec<FeatureMap<T>>> {
    check_config(weights, config)?;
    if features.is_empty() {
        bail!(Argument, "propagation needs at least one frame");
    }
    let n = features.len();
    let mut f: Vec<FeatureMap<T>> = features.to_vec();
    for rp in &weights.layout.rounds {
        let mut b: Vec<Option<FeatureMap<T>>> = alloc::vec![None; n];
        for i in (0..n).rev() {
            let mut t = Tape::new(weights, false);
            let fv = t.leaf(f[i].clone());
            let prev = b.get(i + 1).and_then(|s| s.clone()).map(|s| t.leaf(s));
            let out = enhancement_step(&mut t, &rp.backward, fv, None, prev)?;
            b[i] = Some(t.take(out));
        }
        let mut h: Vec<FeatureMap<T>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut t = Tape::new(weights, false);
            let fv = t.leaf(f[i].clone());
            let bv = t.leaf(b[i].take().expect("backward state"));
            let prev = if i > 0 { Some(t.leaf(h[i - 1].clone())) } else { None };
            let out = enhancement_step(&mut t, &rp.forward, fv, Some(bv), prev)?;
            h.push(t.take(out));
        }
        f = h;
    }
    Ok(f)
}

fn normalized_luma<T: Scalar>(p: &Plane) -> FeatureMap<T> {
    let max = p.max_value() as f64;
    let values = p.samples().iter().map(|&s| T::from_f64(s as f64 / max)).collect();
    FeatureMap { channels: 1, height: p.height(), width: p.width(), values }
}

/// Reconstruction residuals for a clip of normalized luma planes.
fn residuals<T: Scalar>(luma: &[FeatureMap<T>], weights: &Weights<T>, config: &ModelConfig) -> Result<Vec<FeatureMap<T>>> {
    check_config(weights, config)?;
    if luma.is_empty() {
        bail!(Argument, "no frames to enhance");
    }
    let (h, w) = (luma[0].height, luma[0].width);
    if luma.iter().any(|l| l.channels != 1 || l.height != h || l.width != w) {
        bail!(Argument, "frames must be single-channel planes of one size");
    }
    if w < super::freq::MIN_BAND_SIZE || h < super::freq::MIN_BAND_SIZE {
        bail!(Argument, "frames of {w}x{h} are too small to enhance");
    }
    let n = luma.len();
    let r = config.temporal_radius as isize;
    let feats: Vec<FeatureMap<T>> = luma
        .iter()
        .map(|l| {
            let mut t = Tape::new(weights, false);
            let leaf = t.leaf(l.clone());
            let out = sku(&mut t, leaf);
            t.take(out)
        })
        .collect();
    let mut fused = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = Tape::new(weights, false);
        let window: Vec<Var> = (-r..=r).map(|d| t.leaf(feats[clamp_index(i, d, n)].clone())).collect();
        let (_, f) = stff(&mut t, &window)?;
        fused.push(t.take(f));
    }
    drop(feats);
    let hidden = propagate_grid(&fused, weights, config)?;
    drop(fused);
    hidden
        .into_iter()
        .map(|h| {
            let mut t = Tape::new(weights, false);
            let mut x = t.leaf(h);
            for p in &weights.layout.ofae {
                x = ofae(&mut t, p, x)?;
            }
            let res = conv(&mut t, x, &weights.layout.head);
            t.check_finite(res, "reconstruction head")?;
            Ok(t.take(res))
        })
        .collect()
}

/// Enhanced luma for a clip of planes normalized to `[0, 1]`, before
/// requantization.
pub fn enhance_luma<T: Scalar>(luma: &[FeatureMap<T>], weights: &Weights<T>, config: &ModelConfig) -> Result<Vec<FeatureMap<T>>> {
    let mut res = residuals(luma, weights, config)?;
    for (r, l) in res.iter_mut().zip(luma) {
        for (v, &x) in r.values.iter_mut().zip(&l.values) {
            *v = *v + x;
        }
    }
    Ok(res)
}

/// Enhances every frame's luma; chroma is copied through.
pub fn enhance_sequence<T: Scalar>(decoded: &Sequence, weights: &Weights<T>, config: &ModelConfig) -> Result<Sequence> {
    let luma: Vec<FeatureMap<T>> = decoded.frames().iter().map(|f| normalized_luma(&f.y)).collect();
    let res = residuals(&luma, weights, config)?;
    drop(luma);
    let max = decoded.frames()[0].y.max_value() as f64;
    let mut out_luma = Vec::with_capacity(res.len());
    for (res, frame) in res.into_iter().zip(decoded.frames()) {
        let samples = frame
            .y
            .samples()
            .iter()
            .zip(&res.values)
            .map(|(&s, &d)| libm::round(s as f64 + d.as_f64() * max).clamp(0.0, max) as u16)
            .collect();
        out_luma.push(Plane::new(frame.y.width(), frame.y.height(), frame.y.bit_depth(), samples)?);
    }
    decoded.with_luma(out_luma)
}
