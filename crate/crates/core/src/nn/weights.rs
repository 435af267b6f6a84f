//! Parameter layout and storage.
//!
//! The layout is a pure function of [`ModelConfig`]: every sub-block
//! registers its tensors in a fixed order with dotted names such as
//! `prop.r0.backward.ofae.fuse.weight`. The first two name components (or
//! three for propagation) identify the sub-block a tensor belongs to.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand::{RngCore, SeedableRng};

use super::config::ModelConfig;
use super::ops::{ConvShape, DeformShape};
use crate::error::{bail, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±gain * sqrt(6 / fan_in)`.
    Uniform { fan_in: usize, gain: f64 },
    Zero,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvP {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub shape: ConvShape,
}

#[derive(Debug, Clone)]
pub(crate) struct SkP {
    pub branch_a: ConvP,
    pub branch_b: ConvP,
    pub squeeze: ConvP,
    pub select_a: ConvP,
    pub select_b: ConvP,
}

#[derive(Debug, Clone)]
pub(crate) struct SkuP {
    pub head: ConvP,
    pub sk1: SkP,
    pub sk2: SkP,
    pub dec1: ConvP,
    pub dec0: ConvP,
}

#[derive(Debug, Clone)]
pub(crate) struct AlignP {
    pub hidden: ConvP,
    pub offset: ConvP,
    pub mask: ConvP,
    pub deform: ParamId,
    pub deform_shape: DeformShape,
}

#[derive(Debug, Clone)]
pub(crate) struct OfaeP {
    pub bands: [ConvP; 3],
    pub fuse: ConvP,
}

#[derive(Debug, Clone)]
pub(crate) struct EbP {
    pub align: AlignP,
    pub fuse: ConvP,
    pub ofae: OfaeP,
}

#[derive(Debug, Clone)]
pub(crate) struct RoundP {
    pub backward: EbP,
    pub forward: EbP,
}

/// Where every sub-block's parameters live.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub sku: SkuP,
    pub stff_align: Option<AlignP>,
    pub stff_fuse: ConvP,
    pub rounds: Vec<RoundP>,
    pub ofae: Vec<OfaeP>,
    pub head: ConvP,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, dil: usize, init: Option<f64>) -> ConvP {
        let fan_in = cin * k * k;
        let winit = init.map_or(Init::Zero, |gain| Init::Uniform { fan_in, gain });
        let w = self.push(format!("{name}.weight"), vec![cout, cin, k, k], winit);
        let b = self.push(format!("{name}.bias"), vec![cout], Init::Zero);
        ConvP { w, b: Some(b), shape: ConvShape { cin, cout, k, dil } }
    }

    fn sk(&mut self, name: &str, c: usize, squeeze: usize) -> SkP {
        SkP {
            branch_a: self.conv(&format!("{name}.branch_a"), c, c, 3, 1, Some(1.0)),
            branch_b: self.conv(&format!("{name}.branch_b"), c, c, 3, 2, Some(1.0)),
            squeeze: self.conv(&format!("{name}.squeeze"), c, squeeze, 1, 1, Some(1.0)),
            select_a: self.conv(&format!("{name}.select_a"), squeeze, c, 1, 1, Some(1.0)),
            select_b: self.conv(&format!("{name}.select_b"), squeeze, c, 1, 1, Some(1.0)),
        }
    }

    fn align(&mut self, name: &str, cfg: &ModelConfig) -> AlignP {
        let c = cfg.channels;
        let hid = cfg.offset_hidden();
        let ds = DeformShape { channels: c, cout: c, k: 3, groups: cfg.offset_groups };
        let hidden = self.conv(&format!("{name}.hidden"), 2 * c, hid, 1, 1, Some(1.0));
        // offset and mask predictors start at zero: plain convolution at init
        let offset = self.conv(&format!("{name}.offset"), hid, ds.offset_channels(), 3, 1, None);
        let mask = self.conv(&format!("{name}.mask"), hid, ds.mask_channels(), 3, 1, None);
        let deform = self.push(
            format!("{name}.deform.weight"),
            vec![c, c, 3, 3],
            Init::Uniform { fan_in: c * 9, gain: 1.0 },
        );
        AlignP { hidden, offset, mask, deform, deform_shape: ds }
    }

    fn ofae(&mut self, name: &str, c: usize) -> OfaeP {
        OfaeP {
            bands: [
                self.conv(&format!("{name}.low"), c, c, 3, 1, Some(1.0)),
                self.conv(&format!("{name}.mid"), c, c, 3, 1, Some(1.0)),
                self.conv(&format!("{name}.high"), c, c, 3, 1, Some(1.0)),
            ],
            fuse: self.conv(&format!("{name}.fuse"), 3 * c, c, 1, 1, Some(0.1)),
        }
    }

    fn eb(&mut self, name: &str, cfg: &ModelConfig, inputs: usize) -> EbP {
        let c = cfg.channels;
        EbP {
            align: self.align(&format!("{name}.align"), cfg),
            fuse: self.conv(&format!("{name}.fuse"), inputs * c, c, 1, 1, Some(1.0)),
            ofae: self.ofae(&format!("{name}.ofae"), c),
        }
    }
}

impl Layout {
    pub(crate) fn build(cfg: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
        let c = cfg.channels;
        let mut b = Builder { specs: Vec::new() };
        let sku = SkuP {
            head: b.conv("stff.sku.head", 1, c, 3, 1, Some(1.0)),
            sk1: b.sk("stff.sku.sk1", c, cfg.squeeze()),
            sk2: b.sk("stff.sku.sk2", c, cfg.squeeze()),
            dec1: b.conv("stff.sku.dec1", c, c, 3, 1, Some(1.0)),
            dec0: b.conv("stff.sku.dec0", c, c, 3, 1, Some(1.0)),
        };
        let stff_align = (cfg.temporal_radius > 0).then(|| b.align("stff.align", cfg));
        let stff_fuse = b.conv("stff.fuse", cfg.window_len() * c, c, 1, 1, Some(1.0));
        let rounds = (0..cfg.propagation_rounds)
            .map(|r| RoundP {
                backward: b.eb(&format!("prop.r{r}.backward"), cfg, 2),
                forward: b.eb(&format!("prop.r{r}.forward"), cfg, 3),
            })
            .collect();
        let ofae = (0..cfg.ofae_blocks).map(|i| b.ofae(&format!("ofae.{i}"), c)).collect();
        // zero head: the untrained network is the identity
        let head = b.conv("head", c, 1, 3, 1, None);
        (Layout { sku, stff_align, stff_fuse, rounds, ofae, head }, b.specs)
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All learned parameters of one model, validated against its config.
#[derive(Debug, Clone)]
pub struct Weights<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    pub(crate) layout: Layout,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

impl<T: Scalar> Weights<T> {
    /// Training initialization: scaled-uniform convolutions, zero biases,
    /// zero offset/mask predictors and a zero reconstruction head.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .into_iter()
            .map(|s| {
                let data = match s.init {
                    Init::Zero => vec![T::zero(); s.len()],
                    Init::Uniform { fan_in, gain } => {
                        let bound = gain * libm::sqrt(6.0 / fan_in as f64);
                        (0..s.len()).map(|_| T::from_f64(bound * uniform(&mut rng))).collect()
                    }
                };
                Param { name: s.name, shape: s.shape, data }
            })
            .collect();
        Ok(Self { config: *config, params, layout })
    }

    /// Every tensor drawn at random, including the ones training starts at
    /// zero. Used where "generic" weights are needed.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|s| {
                let fan_in = if s.shape.len() == 4 { s.shape[1] * s.shape[2] * s.shape[3] } else { 16 };
                let scale = if s.name.contains(".offset.") {
                    // keep sampling positions within a pixel or two
                    0.5 / libm::sqrt(fan_in as f64)
                } else if s.shape.len() == 1 {
                    0.1
                } else {
                    libm::sqrt(3.0 / fan_in as f64)
                };
                let data = (0..s.len()).map(|_| T::from_f64(scale * uniform(&mut rng))).collect();
                Param { name: s.name, shape: s.shape, data }
            })
            .collect();
        Ok(Self { config: *config, params, layout })
    }

    /// Assembles weights from named tensors, auditing names and shapes
    /// against the layout implied by `config`.
    pub fn from_params(config: &ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(config);
        if params.len() != specs.len() {
            bail!(Load, "expected {} parameter tensors, found {}", specs.len(), params.len());
        }
        for (spec, p) in specs.iter().zip(&params) {
            if spec.name != p.name {
                bail!(Load, "parameter '{}' found where '{}' was expected", p.name, spec.name);
            }
            if spec.shape != p.shape || p.data.len() != spec.len() {
                bail!(
                    Load,
                    "parameter '{}' has shape {:?} ({} values), expected {:?}",
                    p.name,
                    p.shape,
                    p.data.len(),
                    spec.shape
                );
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                bail!(Load, "parameter '{}' contains non-finite values", p.name);
            }
        }
        Ok(Self { config: *config, params, layout })
    }

    /// Parameter names and shapes implied by a config.
    pub fn specs(config: &ModelConfig) -> Vec<ParamSpec> {
        Layout::build(config).1
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Zeros every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[inline]
    pub(crate) fn data(&self, id: ParamId) -> &[T] {
        &self.params[id.0].data
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }
}

/// Sub-block a parameter belongs to, e.g. `stff.sku` or `prop.r0.forward`.
pub fn param_group(name: &str) -> &str {
    let depth = if name.starts_with("prop.") { 3 } else { 2 };
    let mut end = name.len();
    let mut seen = 0;
    for (i, ch) in name.char_indices() {
        if ch == '.' {
            seen += 1;
            if seen == depth {
                end = i;
                break;
            }
        }
    }
    let group = &name[..end];
    // "head.weight" -> "head"
    group.strip_suffix(".weight").or_else(|| group.strip_suffix(".bias")).unwrap_or(group)
}
