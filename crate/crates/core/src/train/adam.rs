use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{ParamGrads, Weights};
use crate::Scalar;

/// Adaptive-moment optimizer state, one moment pair per parameter value.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(weights: &Weights<T>, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        let zeros = || weights.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { lr, beta1: betas.0, beta2: betas.1, eps, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step<T: Scalar>(&mut self, weights: &mut Weights<T>, grads: &ParamGrads<T>) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in weights.params_mut().iter_mut().zip(&grads.grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = self.lr * (*m / c1) / (libm::sqrt(*v / c2) + self.eps);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
    }
}
