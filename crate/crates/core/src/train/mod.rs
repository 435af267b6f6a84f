//! Charbonnier-loss training of the enhancement network.

mod adam;
mod gradcheck;
mod loss;
mod patches;

pub use adam::Adam;
pub use gradcheck::{gradient_check, GroupCheck};
pub use loss::{charbonnier_grad, charbonnier_loss};
pub use patches::{make_patches, TrainingSample};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::nn::{forward_clip, ModelConfig, ParamGrads, Tape, Weights};
use crate::Scalar;

/// Optimizer and sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    /// Adam denominator guard.
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub stride: usize,
    /// Charbonnier epsilon.
    pub eps_loss: f64,
    pub seed: u64,
    /// Steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            steps: 1000,
            batch_size: 4,
            patch_size: 32,
            stride: 16,
            eps_loss: 1e-6,
            seed: 0,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            bail!(Argument, "learning_rate must be a finite non-negative number");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            bail!(Argument, "betas must lie in [0, 1), got ({b1}, {b2})");
        }
        if !(self.adam_eps > 0.0) {
            bail!(Argument, "adam_eps must be positive");
        }
        if !(self.eps_loss > 0.0) {
            bail!(Argument, "eps_loss must be positive, got {}", self.eps_loss);
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.stride == 0 {
            bail!(Argument, "batch_size, patch_size and stride must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub weights: Weights<T>,
    pub losses: Vec<LossRecord>,
}

/// Loss of one sample. With `grads`, also accumulates `scale * dL/dw`.
pub fn sample_loss<T: Scalar>(
    weights: &Weights<T>,
    sample: &TrainingSample<T>,
    eps: f64,
    grads: Option<(&mut ParamGrads<T>, f64)>,
) -> Result<f64> {
    if sample.window.len() != weights.config().window_len() {
        bail!(
            Argument,
            "sample window has {} frames, model expects {}",
            sample.window.len(),
            weights.config().window_len()
        );
    }
    let mut t = Tape::new(weights, grads.is_some());
    let frames: Vec<_> = sample.window.iter().map(|f| t.leaf(f.clone())).collect();
    let out = forward_clip(&mut t, &frames, sample.center())?;
    let pred = &t.value(out).values;
    let loss = charbonnier_loss(pred, &sample.target.values, eps)?;
    if let Some((grads, scale)) = grads {
        let mut g = charbonnier_grad(pred, &sample.target.values, eps)?;
        let s = T::from_f64(scale);
        g.iter_mut().for_each(|v| *v = *v * s);
        t.backward(&[(out, &g)], grads);
    }
    Ok(loss)
}

/// Mean loss over `samples` without recording gradients.
pub fn dataset_loss<T: Scalar>(weights: &Weights<T>, samples: &[TrainingSample<T>], eps: f64) -> Result<f64> {
    if samples.is_empty() {
        bail!(Argument, "no samples");
    }
    let mut sum = 0.0;
    for s in samples {
        sum += sample_loss(weights, s, eps, None)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains a freshly initialized model.
pub fn train(samples: &[TrainingSample<f32>], model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutput<f32>> {
    model.validate()?;
    train_from(Weights::init(model)?, samples, cfg, |_, _| Ok(()))
}

/// Trains `weights` in place of a fresh init, calling `checkpoint` every
/// `cfg.checkpoint_interval` steps.
pub fn train_from<T: Scalar>(
    mut weights: Weights<T>,
    samples: &[TrainingSample<T>],
    cfg: &TrainConfig,
    mut checkpoint: impl FnMut(usize, &Weights<T>) -> Result<()>,
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if samples.is_empty() {
        bail!(Argument, "no training samples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut opt = Adam::new(&weights, cfg.learning_rate, cfg.betas, cfg.adam_eps);
    let mut grads = ParamGrads::zeros_like(&weights);
    let mut losses = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.batch_size as f64;
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        grads.clear();
        let mut loss = 0.0;
        for &i in &batch {
            loss += sample_loss(&weights, &samples[i], cfg.eps_loss, Some((&mut grads, scale))).map_err(|e| match e {
                crate::Error::Numeric(msg) => crate::Error::Numeric(alloc::format!("step {step}, batch {batch:?}: {msg}")),
                other => other,
            })?;
        }
        loss *= scale;
        if !loss.is_finite() || !grads.is_finite() {
            bail!(Numeric, "non-finite loss or gradient at step {step}, batch samples {batch:?}");
        }
        losses.push(LossRecord { step, loss });
        opt.step(&mut weights, &grads);
        if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
            checkpoint(step, &weights)?;
        }
    }
    log::debug!("trained {} steps", cfg.steps);
    Ok(TrainOutput { weights, losses })
}
