//! The enhancement network and the machinery to differentiate it.

mod config;
mod freq;
mod model;
pub mod ops;
mod tape;
mod tensor;
mod weights;

pub use config::ModelConfig;
pub use freq::{frequency_decompose, Bands, MIN_BAND_SIZE, SIGMA_LARGE, SIGMA_SMALL};
pub use model::{enhance_luma, enhance_sequence, ofae_enhance, propagate_grid, stff_fuse, StffOutput};
pub use ops::{deformable_sample, DeformShape};
pub use tape::{ParamGrads, Tape, Var};
pub use tensor::FeatureMap;
pub use weights::{param_group, Param, ParamSpec, Weights};

pub(crate) use model::forward_clip;
