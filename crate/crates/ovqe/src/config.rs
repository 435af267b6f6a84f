//! TOML run configuration.

use std::path::{Path, PathBuf};

use ovqe_core::nn::ModelConfig;
use ovqe_core::train::TrainConfig;
use serde::Deserialize;

use crate::codec::{CodecSpec, ExternalSpec, DECODER_ENV, DEFAULT_DECODER_ARGS, DEFAULT_ENCODER_ARGS, ENCODER_ENV};
use crate::error::{Error, Result};
use crate::io::{count_frames, YuvFormat};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub name: String,
    /// Raw (uncompressed) source.
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u8,
    #[serde(default = "default_fps")]
    pub frame_rate: f64,
    /// Use at most this many frames.
    pub frames: Option<usize>,
    /// Already-decoded version of `path`; skips the codec.
    pub decoded: Option<PathBuf>,
    /// Already-enhanced version of `decoded`; skips the network in `evaluate`.
    pub enhanced: Option<PathBuf>,
    /// QP `decoded` was produced at, used for the output directory name.
    pub qp: Option<i32>,
}

fn default_bit_depth() -> u8 {
    8
}

fn default_fps() -> f64 {
    30.0
}

impl SequenceEntry {
    pub fn format(&self) -> YuvFormat {
        YuvFormat { width: self.width, height: self.height, bit_depth: self.bit_depth, frame_rate: self.frame_rate }
    }

    /// Output directory name for results derived from `decoded`.
    pub fn given_dir(&self) -> String {
        self.qp.map(|q| format!("qp{q}")).unwrap_or_else(|| "given".into())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    #[serde(default)]
    pub kind: CodecKind,
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub encoder_args: Option<Vec<String>>,
    pub decoder_args: Option<Vec<String>>,
    #[serde(default)]
    pub extra_flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    #[default]
    Mock,
    External,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: usize,
    pub temporal_radius: usize,
    pub propagation_rounds: usize,
    pub ofae_blocks: usize,
    pub offset_groups: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            channels: d.channels,
            temporal_radius: d.temporal_radius,
            propagation_rounds: d.propagation_rounds,
            ofae_blocks: d.ofae_blocks,
            offset_groups: d.offset_groups,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub eps_loss: f64,
    pub seed: u64,
    pub checkpoint_interval: usize,
    /// QP used to make training pairs when a sequence has no `decoded` file.
    pub qp: i32,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            betas: [d.betas.0, d.betas.1],
            adam_eps: d.adam_eps,
            steps: d.steps,
            batch_size: d.batch_size,
            patch_size: d.patch_size,
            stride: d.stride,
            eps_loss: d.eps_loss,
            seed: d.seed,
            checkpoint_interval: d.checkpoint_interval,
            qp: 37,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Checkpoint to read (enhance, evaluate, bdrate) or write (train).
    pub weights: Option<PathBuf>,
    #[serde(default = "default_qps")]
    pub qps: Vec<i32>,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<SequenceEntry>,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("ovqe-out")
}

fn default_qps() -> Vec<i32> {
    vec![32, 37, 42, 47]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        if let Some(w) = &mut self.weights {
            fix(w);
        }
        for s in &mut self.sequences {
            fix(&mut s.path);
            if let Some(d) = &mut s.decoded {
                fix(d);
            }
            if let Some(e) = &mut s.enhanced {
                fix(e);
            }
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            channels: m.channels,
            temporal_radius: m.temporal_radius,
            propagation_rounds: m.propagation_rounds,
            ofae_blocks: m.ofae_blocks,
            offset_groups: m.offset_groups,
            seed: m.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            betas: (t.betas[0], t.betas[1]),
            adam_eps: t.adam_eps,
            steps: t.steps,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            stride: t.stride,
            eps_loss: t.eps_loss,
            seed: t.seed,
            checkpoint_interval: t.checkpoint_interval,
        }
    }

    /// Codec spec with binaries filled in from the environment if unset.
    pub fn codec_spec(&self) -> Result<CodecSpec> {
        let c = &self.codec;
        match c.kind {
            CodecKind::Mock => Ok(CodecSpec::Mock),
            CodecKind::External => {
                let from_env = |v: &Option<PathBuf>, var: &str| {
                    v.clone().or_else(|| std::env::var_os(var).map(PathBuf::from)).ok_or_else(|| {
                        Error::Config(format!("external codec needs a binary: set it in [codec] or via {var}"))
                    })
                };
                let owned = |a: &[&str]| a.iter().map(|s| s.to_string()).collect::<Vec<_>>();
                Ok(CodecSpec::External(ExternalSpec {
                    encoder: from_env(&c.encoder, ENCODER_ENV)?,
                    decoder: from_env(&c.decoder, DECODER_ENV)?,
                    encoder_args: c.encoder_args.clone().unwrap_or_else(|| owned(DEFAULT_ENCODER_ARGS)),
                    decoder_args: c.decoder_args.clone().unwrap_or_else(|| owned(DEFAULT_DECODER_ARGS)),
                    extra_flags: c.extra_flags.clone(),
                }))
            }
        }
    }

    /// Checks everything that can be checked without reading video data.
    pub fn validate(&self, needs: Needs) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Config("no [[sequence]] entries".into()));
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.sequences {
            if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name == "." || s.name == ".." {
                return Err(Error::Config(format!("invalid sequence name {:?}", s.name)));
            }
            if !names.insert(&s.name) {
                return Err(Error::Config(format!("duplicate sequence name {:?}", s.name)));
            }
            if s.width == 0 || s.height == 0 || s.width % 2 != 0 || s.height % 2 != 0 {
                return Err(Error::Config(format!("{}: dimensions {}x{} must be even and non-zero", s.name, s.width, s.height)));
            }
            if s.bit_depth != 8 && s.bit_depth != 10 {
                return Err(Error::Config(format!("{}: bit depth must be 8 or 10, got {}", s.name, s.bit_depth)));
            }
            if !(s.frame_rate > 0.0) || !s.frame_rate.is_finite() {
                return Err(Error::Config(format!("{}: frame rate must be positive", s.name)));
            }
            if s.frames == Some(0) {
                return Err(Error::Config(format!("{}: frames must be positive", s.name)));
            }
            for p in std::iter::once(&s.path).chain(&s.decoded).chain(&s.enhanced) {
                if !p.is_file() {
                    return Err(Error::Config(format!("{}: file {} not found", s.name, p.display())));
                }
                count_frames(p, s.format())?;
            }
            if s.enhanced.is_some() && s.decoded.is_none() {
                return Err(Error::Config(format!("{}: `enhanced` requires `decoded`", s.name)));
            }
        }
        if needs.qps {
            if self.qps.is_empty() {
                return Err(Error::Config("QP list is empty".into()));
            }
            let spec = self.codec_spec()?;
            for &qp in self.qps.iter().chain(needs.train.then_some(&self.train.qp)) {
                spec.check_qp(qp)?;
            }
            if let CodecSpec::External(e) = &spec {
                crate::codec::resolve_binary(&e.encoder)?;
                crate::codec::resolve_binary(&e.decoder)?;
            }
        }
        if needs.bdrate && self.qps.len() < 4 {
            return Err(Error::Config(format!("BD-rate needs at least 4 QPs, got {}", self.qps.len())));
        }
        let model = self.model_config();
        model.validate().map_err(|e| Error::Config(format!("[model] {e}")))?;
        match needs.weights {
            WeightsUse::Required => match &self.weights {
                Some(w) if w.is_file() => {}
                Some(w) => return Err(Error::Config(format!("weights file {} not found", w.display()))),
                None => return Err(Error::Config("`weights` must be set".into())),
            },
            WeightsUse::Optional => {
                if let Some(w) = &self.weights {
                    if !w.is_file() {
                        return Err(Error::Config(format!("weights file {} not found", w.display())));
                    }
                }
            }
            WeightsUse::Output => {}
        }
        if needs.train {
            self.train_config().validate().map_err(|e| Error::Config(format!("[train] {e}")))?;
            for s in &self.sequences {
                if self.train.patch_size > s.width || self.train.patch_size > s.height {
                    return Err(Error::Config(format!(
                        "{}: patch size {} exceeds frame size {}x{}",
                        s.name, self.train.patch_size, s.width, s.height
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsUse {
    Required,
    Optional,
    Output,
}

/// What a command will use from the config.
#[derive(Debug, Clone, Copy)]
pub struct Needs {
    pub qps: bool,
    pub bdrate: bool,
    pub train: bool,
    pub weights: WeightsUse,
}
