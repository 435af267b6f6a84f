use crate::error::{bail, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature width `C`.
    pub channels: usize,
    /// Neighbours on each side of the centre frame (`R`).
    pub temporal_radius: usize,
    /// Backward-then-forward propagation rounds (`N`).
    pub propagation_rounds: usize,
    /// Omni-frequency blocks after propagation.
    pub ofae_blocks: usize,
    /// Channel groups sharing one set of deformable offsets.
    pub offset_groups: usize,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { channels: 32, temporal_radius: 1, propagation_rounds: 1, ofae_blocks: 2, offset_groups: 4, seed: 0 }
    }
}

impl ModelConfig {
    /// The small model used for gradient audits.
    pub fn tiny() -> Self {
        Self { channels: 4, temporal_radius: 1, propagation_rounds: 1, ofae_blocks: 1, offset_groups: 2, seed: 0 }
    }

    pub fn window_len(&self) -> usize {
        2 * self.temporal_radius + 1
    }

    /// Width of the offset-predictor bottleneck.
    pub(crate) fn offset_hidden(&self) -> usize {
        (self.channels / 4).max(2)
    }

    /// Width of the selective-kernel squeeze layer.
    pub(crate) fn squeeze(&self) -> usize {
        (self.channels / 4).max(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 1 {
            bail!(Argument, "channels must be at least 1");
        }
        if self.propagation_rounds < 1 {
            bail!(Argument, "propagation_rounds must be at least 1");
        }
        if self.ofae_blocks < 1 {
            bail!(Argument, "ofae_blocks must be at least 1");
        }
        if self.offset_groups < 1 || self.channels % self.offset_groups != 0 {
            bail!(
                Argument,
                "offset_groups ({}) must divide channels ({})",
                self.offset_groups,
                self.channels
            );
        }
        Ok(())
    }

    /// Same architecture, ignoring the seed.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        ModelConfig { seed: 0, ..*self } == ModelConfig { seed: 0, ..*other }
    }
}
