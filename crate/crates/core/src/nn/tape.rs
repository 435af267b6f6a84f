//! Reverse-mode differentiation over feature-map operations.
//!
//! A [`Tape`] records every operation applied to [`Var`]s together with
//! whatever the adjoint needs. [`Tape::backward`] walks the record in
//! reverse and accumulates parameter gradients into a caller-owned buffer.
//! A tape built with `record = false` keeps values but drops adjoint state,
//! which is what inference uses.

use alloc::vec;
use alloc::vec::Vec;

use super::ops::{self, ConvShape, DeformShape, LEAKY_SLOPE};
use super::tensor::FeatureMap;
use super::weights::{ParamId, Weights};
use crate::error::{bail, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: Var, w: ParamId, b: Option<ParamId>, shape: ConvShape },
    Leaky { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    Pool { x: Var },
    Upsample { x: Var },
    Blur { x: Var, kernel: Vec<T> },
    GlobalAvg { x: Var },
    SkMix { a: Var, b: Var, za: Var, zb: Var },
    Deform { x: Var, off: Var, mask: Var, w: ParamId, shape: DeformShape, cols: Vec<T> },
}

struct Node<T> {
    value: FeatureMap<T>,
    op: Op<T>,
}

/// Per-parameter gradient buffers, laid out like [`Weights::params`].
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(w: &Weights<T>) -> Self {
        Self { grads: w.params().iter().map(|p| vec![T::zero(); p.data.len()]).collect() }
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = *v * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

pub struct Tape<'w, T: Scalar> {
    weights: &'w Weights<T>,
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<'w, T: Scalar> Tape<'w, T> {
    pub fn new(weights: &'w Weights<T>, record: bool) -> Self {
        Self { weights, nodes: Vec::new(), record }
    }

    pub fn weights(&self) -> &'w Weights<T> {
        self.weights
    }

    fn push(&mut self, value: FeatureMap<T>, op: Op<T>) -> Var {
        let op = if self.record { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: FeatureMap<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &FeatureMap<T> {
        &self.nodes[v.0].value
    }

    pub fn take(mut self, v: Var) -> FeatureMap<T> {
        core::mem::replace(&mut self.nodes[v.0].value, FeatureMap::zeros(0, 0, 0))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn conv(&mut self, x: Var, w: ParamId, b: Option<ParamId>, shape: ConvShape) -> Var {
        let weights = self.weights;
        let out = ops::conv2d(self.value(x), weights.data(w), b.map(|b| weights.data(b)), shape);
        self.push(out, Op::Conv { x, w, b, shape })
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let slope = T::from_f64(LEAKY_SLOPE);
        out.values.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = *v * slope
            }
        });
        self.push(out, Op::Leaky { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.values.iter_mut().for_each(|v| *v = ops::sigmoid(*v));
        self.push(out, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        debug_assert!(out.same_shape(self.value(b)));
        for (o, &v) in out.values.iter_mut().zip(&self.nodes[b.0].value.values) {
            *o = *o + v;
        }
        self.push(out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        debug_assert!(out.same_shape(self.value(b)));
        for (o, &v) in out.values.iter_mut().zip(&self.nodes[b.0].value.values) {
            *o = *o - v;
        }
        self.push(out, Op::Sub { a, b })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]);
        let (h, w) = (first.height, first.width);
        let channels = parts.iter().map(|p| self.value(*p).channels).sum();
        let mut values = Vec::with_capacity(channels * h * w);
        for p in parts {
            let v = self.value(*p);
            debug_assert_eq!((v.height, v.width), (h, w));
            values.extend_from_slice(&v.values);
        }
        let out = FeatureMap { channels, height: h, width: w, values };
        self.push(out, Op::Concat { parts: parts.to_vec() })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let out = ops::avg_pool2(self.value(x));
        self.push(out, Op::Pool { x })
    }

    /// Nearest 2x upsampling to the spatial size of `like`.
    pub fn upsample_like(&mut self, x: Var, like: Var) -> Var {
        let (h, w) = (self.value(like).height, self.value(like).width);
        let out = ops::upsample2(self.value(x), h, w);
        self.push(out, Op::Upsample { x })
    }

    pub fn blur(&mut self, x: Var, sigma: f64) -> Var {
        let kernel = ops::gaussian_kernel::<T>(sigma);
        let out = ops::gaussian_blur(self.value(x), &kernel);
        self.push(out, Op::Blur { x, kernel })
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_f64(v.plane_len() as f64);
        let values = (0..v.channels).map(|c| v.plane(c).iter().fold(T::zero(), |a, &b| a + b) / n).collect();
        let out = FeatureMap { channels: v.channels, height: 1, width: 1, values };
        self.push(out, Op::GlobalAvg { x })
    }

    /// Per-channel softmax selection between two branches:
    /// `s * a + (1 - s) * b` with `s = sigmoid(za - zb)`.
    pub fn sk_mix(&mut self, a: Var, b: Var, za: Var, zb: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (la, lb) = (self.value(za), self.value(zb));
        let mut out = va.clone();
        let n = va.plane_len();
        for c in 0..va.channels {
            let s = ops::sigmoid(la.values[c] - lb.values[c]);
            let bp = vb.plane(c);
            for (o, &bv) in out.values[c * n..(c + 1) * n].iter_mut().zip(bp) {
                *o = s * *o + (T::one() - s) * bv;
            }
        }
        self.push(out, Op::SkMix { a, b, za, zb })
    }

    pub(crate) fn deform(&mut self, x: Var, off: Var, mask: Var, w: ParamId, shape: DeformShape) -> Result<Var> {
        let (out, cols) =
            ops::deform_forward(self.value(x), self.value(off), self.value(mask), self.weights.data(w), shape)?;
        let cols = if self.record { cols } else { Vec::new() };
        Ok(self.push(out, Op::Deform { x, off, mask, w, shape, cols }))
    }

    /// Fails with a numeric error naming `what` if `v` holds NaN or Inf.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if !self.value(v).is_finite() {
            bail!(Numeric, "non-finite activations after {what}");
        }
        Ok(())
    }

    /// Back-propagates `seeds` (gradients of some scalar with respect to
    /// the given vars), accumulating parameter gradients into `grads`.
    /// Returns the gradient of every node (empty for unreached nodes).
    pub fn backward(&self, seeds: &[(Var, &[T])], grads: &mut ParamGrads<T>) -> Vec<Vec<T>> {
        assert!(self.record, "backward on a non-recording tape");
        let mut g: Vec<Vec<T>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        for (v, seed) in seeds {
            accumulate(&mut g, *v, seed, self.nodes[v.0].value.values.len());
        }
        for idx in (0..self.nodes.len()).rev() {
            if g[idx].is_empty() {
                continue;
            }
            let gout_vec = core::mem::take(&mut g[idx]);
            let node = &self.nodes[idx];
            let gout = FeatureMap {
                channels: node.value.channels,
                height: node.value.height,
                width: node.value.width,
                values: gout_vec,
            };
            self.step(&node.op, &node.value, &gout, &mut g, grads);
            g[idx] = gout.values;
        }
        g
    }

    fn step(&self, op: &Op<T>, out: &FeatureMap<T>, gout: &FeatureMap<T>, g: &mut [Vec<T>], grads: &mut ParamGrads<T>) {
        let len = |v: Var| self.nodes[v.0].value.values.len();
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, shape } => {
                let xv = &self.nodes[x.0].value;
                ensure(g, *x, len(*x));
                let (gw, gb) = split_two(&mut grads.grads, w.0, b.map(|b| b.0));
                ops::conv2d_backward(xv, self.weights.data(*w), *shape, gout, Some(&mut g[x.0]), gw, gb);
            }
            Op::Leaky { x } => {
                let xv = &self.nodes[x.0].value.values;
                let slope = T::from_f64(LEAKY_SLOPE);
                ensure(g, *x, xv.len());
                for ((d, &gv), &xi) in g[x.0].iter_mut().zip(&gout.values).zip(xv) {
                    *d = *d + if xi > T::zero() { gv } else { gv * slope };
                }
            }
            Op::Sigmoid { x } => {
                ensure(g, *x, len(*x));
                for ((d, &gv), &s) in g[x.0].iter_mut().zip(&gout.values).zip(&out.values) {
                    *d = *d + gv * s * (T::one() - s);
                }
            }
            Op::Add { a, b } => {
                accumulate(g, *a, &gout.values, gout.values.len());
                accumulate(g, *b, &gout.values, gout.values.len());
            }
            Op::Sub { a, b } => {
                accumulate(g, *a, &gout.values, gout.values.len());
                ensure(g, *b, gout.values.len());
                for (d, &gv) in g[b.0].iter_mut().zip(&gout.values) {
                    *d = *d - gv;
                }
            }
            Op::Concat { parts } => {
                let mut start = 0;
                for p in parts {
                    let n = len(*p);
                    accumulate(g, *p, &gout.values[start..start + n], n);
                    start += n;
                }
            }
            Op::Pool { x } => {
                ensure(g, *x, len(*x));
                ops::avg_pool2_backward(self.nodes[x.0].value.shape(), gout, &mut g[x.0]);
            }
            Op::Upsample { x } => {
                ensure(g, *x, len(*x));
                ops::upsample2_backward(self.nodes[x.0].value.shape(), gout, &mut g[x.0]);
            }
            Op::Blur { x, kernel } => {
                ensure(g, *x, len(*x));
                ops::gaussian_blur_backward(gout, kernel, &mut g[x.0]);
            }
            Op::GlobalAvg { x } => {
                let xv = &self.nodes[x.0].value;
                let n = xv.plane_len();
                let inv = T::one() / T::from_f64(n as f64);
                ensure(g, *x, xv.values.len());
                for c in 0..xv.channels {
                    let share = gout.values[c] * inv;
                    g[x.0][c * n..(c + 1) * n].iter_mut().for_each(|d| *d = *d + share);
                }
            }
            Op::SkMix { a, b, za, zb } => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (la, lb) = (&self.nodes[za.0].value, &self.nodes[zb.0].value);
                let n = va.plane_len();
                ensure(g, *a, va.values.len());
                ensure(g, *b, vb.values.len());
                ensure(g, *za, la.values.len());
                ensure(g, *zb, lb.values.len());
                for c in 0..va.channels {
                    let s = ops::sigmoid(la.values[c] - lb.values[c]);
                    let mut gs = T::zero();
                    for p in c * n..(c + 1) * n {
                        let gv = gout.values[p];
                        g[a.0][p] = g[a.0][p] + s * gv;
                        g[b.0][p] = g[b.0][p] + (T::one() - s) * gv;
                        gs = gs + gv * (va.values[p] - vb.values[p]);
                    }
                    let gz = gs * s * (T::one() - s);
                    g[za.0][c] = g[za.0][c] + gz;
                    g[zb.0][c] = g[zb.0][c] - gz;
                }
            }
            Op::Deform { x, off, mask, w, shape, cols } => {
                ensure(g, *x, len(*x));
                ensure(g, *off, len(*off));
                ensure(g, *mask, len(*mask));
                let mut gx = core::mem::take(&mut g[x.0]);
                let mut goff = core::mem::take(&mut g[off.0]);
                let mut gmask = core::mem::take(&mut g[mask.0]);
                ops::deform_backward(
                    &self.nodes[x.0].value,
                    &self.nodes[off.0].value,
                    &self.nodes[mask.0].value,
                    self.weights.data(*w),
                    *shape,
                    cols,
                    gout,
                    &mut gx,
                    &mut goff,
                    &mut gmask,
                    &mut grads.grads[w.0],
                );
                g[x.0] = gx;
                g[off.0] = goff;
                g[mask.0] = gmask;
            }
        }
    }
}

fn ensure<T: Scalar>(g: &mut [Vec<T>], v: Var, n: usize) {
    if g[v.0].is_empty() {
        g[v.0] = vec![T::zero(); n];
    }
}

fn accumulate<T: Scalar>(g: &mut [Vec<T>], v: Var, src: &[T], n: usize) {
    ensure(g, v, n);
    for (d, &s) in g[v.0].iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn split_two<T>(v: &mut [Vec<T>], a: usize, b: Option<usize>) -> (&mut [T], Option<&mut [T]>) {
    match b {
        None => (&mut v[a], None),
        Some(b) => {
            debug_assert_ne!(a, b);
            if a < b {
                let (lo, hi) = v.split_at_mut(b);
                (&mut lo[a], Some(&mut hi[0]))
            } else {
                let (lo, hi) = v.split_at_mut(a);
                (&mut hi[0], Some(&mut lo[b]))
            }
        }
    }
}
