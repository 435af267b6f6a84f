//! Command implementations behind the `ovqe` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ovqe_core::codec::Codec;
use ovqe_core::frame::Sequence;
use ovqe_core::metrics::{bd_rate, delta_psnr, rd_sweep_with, DeltaPsnr, Enhancer};
use ovqe_core::nn::{enhance_sequence, ModelConfig, Weights};
use ovqe_core::train::{make_patches, train_from, LossRecord};
use serde::Serialize;

use crate::checkpoint::{load_weights, save_weights};
use crate::config::{Needs, RunConfig, SequenceEntry, WeightsUse};
use crate::error::{Error, InModule, Result};
use crate::io::{read_yuv420, write_yuv420};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "ovqe", version, about = "Multi-frame quality enhancement for decoded video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for weight init and sample order, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Keep codec scratch files.
    #[arg(long, global = true)]
    pub keep_temp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Enhance decoded sequences and write the enhanced YUV.
    Enhance,
    /// Train weights on raw/decoded pairs.
    Train,
    /// Per-frame PSNR of baseline and enhanced decodes.
    Evaluate,
    /// RD sweep and BD-rate of the enhanced chain against the baseline.
    Bdrate,
}

pub fn run(cli: &Cli) -> Result<()> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    let ctx = Ctx { cfg, keep_temp: cli.keep_temp };
    match cli.command {
        Command::Enhance => ctx.enhance(),
        Command::Train => ctx.train(),
        Command::Evaluate => ctx.evaluate(),
        Command::Bdrate => ctx.bdrate(),
    }
}

struct Ctx {
    cfg: RunConfig,
    keep_temp: bool,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    sequence: &'a str,
    run: String,
    baseline_db: f64,
    enhanced_db: f64,
    delta_db: f64,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

impl Ctx {
    fn model(&self) -> ModelConfig {
        self.cfg.model_config()
    }

    fn needs_codec(&self) -> bool {
        self.cfg.sequences.iter().any(|s| s.decoded.is_none())
    }

    fn weights(&self) -> Result<Option<Weights<f32>>> {
        self.cfg.weights.as_deref().map(|p| load_weights(p, &self.model())).transpose()
    }

    fn read(&self, s: &SequenceEntry, path: &Path) -> Result<Sequence> {
        read_yuv420(path, s.format(), s.frames)
    }

    fn codec(&self) -> Result<Box<dyn Codec>> {
        create_dir(&self.cfg.out)?;
        self.cfg.codec_spec()?.build(&self.cfg.out, self.keep_temp)
    }

    fn enhance_seq(&self, w: &Weights<f32>, decoded: &Sequence) -> Result<Sequence> {
        enhance_sequence(decoded, w, &self.model()).in_module("ovqe_net")
    }

    /// Calls `f(dir, raw, decoded)` for every (sequence, QP) pair.
    fn for_each_pair(&self, mut f: impl FnMut(&SequenceEntry, &Path, &Sequence, &Sequence) -> Result<()>) -> Result<()> {
        let mut codec = if self.needs_codec() { Some(self.codec()?) } else { None };
        for s in &self.cfg.sequences {
            let raw = self.read(s, &s.path)?;
            if let Some(d) = &s.decoded {
                let dec = self.read(s, d)?;
                let dir = self.cfg.out.join(&s.name).join(s.given_dir());
                create_dir(&dir)?;
                f(s, &dir, &raw, &dec)?;
            } else {
                let codec = codec.as_mut().expect("codec built when a sequence lacks a decode");
                for &qp in &self.cfg.qps {
                    let coded = codec.encode_decode(&raw, qp).in_module("codec_bridge")?;
                    let dir = self.cfg.out.join(&s.name).join(format!("qp{qp}"));
                    create_dir(&dir)?;
                    log::info!("{} qp {qp}: {:.2} kbps", s.name, coded.bitrate_kbps);
                    f(s, &dir, &raw, &coded.decoded)?;
                }
            }
        }
        Ok(())
    }

    fn enhance(&self) -> Result<()> {
        self.cfg.validate(Needs { qps: self.needs_codec(), bdrate: false, train: false, weights: WeightsUse::Required })?;
        let w = self.weights()?.expect("validated");
        self.for_each_pair(|s, dir, raw, dec| {
            let enh = self.enhance_seq(&w, dec)?;
            write_yuv420(&enh, &dir.join("enhanced.yuv"))?;
            if s.decoded.is_none() {
                write_yuv420(dec, &dir.join("decoded.yuv"))?;
            }
            let d = delta_psnr(&enh, dec, raw).in_module("metrics")?;
            report::write_psnr_csv(&dir.join("psnr.csv"), &d)?;
            log::info!("{}: {} frames, delta PSNR {:+.4} dB", dir.display(), enh.len(), d.average);
            Ok(())
        })
    }

    fn evaluate(&self) -> Result<()> {
        let all_given = self.cfg.sequences.iter().all(|s| s.enhanced.is_some());
        let weights = if all_given { WeightsUse::Optional } else { WeightsUse::Required };
        self.cfg.validate(Needs { qps: self.needs_codec(), bdrate: false, train: false, weights })?;
        let w = if all_given { None } else { self.weights()? };
        let mut rows: Vec<(String, String, DeltaPsnr)> = Vec::new();
        self.for_each_pair(|s, dir, raw, dec| {
            let enh = match &s.enhanced {
                Some(p) => self.read(s, p)?,
                None => self.enhance_seq(w.as_ref().expect("validated"), dec)?,
            };
            let d = delta_psnr(&enh, dec, raw).in_module("metrics")?;
            report::write_psnr_csv(&dir.join("psnr.csv"), &d)?;
            let run = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            report::plot_psnr(&dir.join("psnr.svg"), &format!("{} {run}", s.name), &d)?;
            println!("{} {run}: baseline {:.4} dB, enhanced {:.4} dB, delta {:+.4} dB", s.name, d.decoded.average, d.enhanced.average, d.average);
            rows.push((s.name.clone(), run, d));
            Ok(())
        })?;
        let summary = rows.iter().map(|(seq, run, d)| SummaryRow {
            sequence: seq,
            run: run.clone(),
            baseline_db: d.decoded.average,
            enhanced_db: d.enhanced.average,
            delta_db: d.average,
        });
        report::write_rows(
            &self.cfg.out.join("summary.csv"),
            &["sequence", "run", "baseline_db", "enhanced_db", "delta_db"],
            summary,
        )
    }

    fn bdrate(&self) -> Result<()> {
        self.cfg.validate(Needs { qps: true, bdrate: true, train: false, weights: WeightsUse::Optional })?;
        let w = self.weights()?;
        let model = self.model();
        let mut codec = self.codec()?;
        let mut rows = Vec::new();
        for s in &self.cfg.sequences {
            let raw = self.read(s, &s.path)?;
            let seq_dir = self.cfg.out.join(&s.name);
            let enhancer = w.as_ref().map(|w| Enhancer::new(w, &model));
            let curves = rd_sweep_with(&raw, &self.cfg.qps, codec.as_mut(), enhancer, |step| {
                let dir = seq_dir.join(format!("qp{}", step.qp));
                create_dir(&dir).map_err(|e| ovqe_core::Error::Codec(e.to_string()))?;
                let d = delta_psnr(step.enhanced, &step.coded.decoded, &raw)?;
                report::write_psnr_csv(&dir.join("psnr.csv"), &d).map_err(|e| ovqe_core::Error::Codec(e.to_string()))
            })
            .in_module("metrics")?;
            report::write_rd_csv(&seq_dir.join("rd.csv"), &curves)?;
            report::plot_rd(&seq_dir.join("rd.svg"), &s.name, &curves)?;
            let bd = bd_rate(&curves.baseline, &curves.enhanced).in_module("metrics")?;
            println!("{}: BD-rate {bd:+.3} %", s.name);
            rows.push(report::BdRateRow {
                sequence: s.name.clone(),
                anchor: "baseline".into(),
                test: "enhanced".into(),
                bd_rate_percent: bd,
            });
        }
        report::write_bdrate_csv(&self.cfg.out.join("bdrate.csv"), &rows)
    }

    fn train(&self) -> Result<()> {
        self.cfg.validate(Needs { qps: self.needs_codec(), bdrate: false, train: true, weights: WeightsUse::Output })?;
        let model = self.model();
        let tc = self.cfg.train_config();
        let mut codec = if self.needs_codec() { Some(self.codec()?) } else { None };
        let mut samples = Vec::new();
        for s in &self.cfg.sequences {
            let raw = self.read(s, &s.path)?;
            let dec = match &s.decoded {
                Some(p) => self.read(s, p)?,
                None => {
                    let c = codec.as_mut().expect("codec built when a sequence lacks a decode");
                    c.encode_decode(&raw, self.cfg.train.qp).in_module("codec_bridge")?.decoded
                }
            };
            let mut part = make_patches::<f32>(&raw, &dec, tc.patch_size, tc.stride, model.temporal_radius, tc.seed)
                .in_module("training")?;
            samples.append(&mut part);
        }
        log::info!("training on {} patches for {} steps", samples.len(), tc.steps);
        create_dir(&self.cfg.out)?;
        let ckpt_dir = self.cfg.out.join("checkpoints");
        if tc.checkpoint_interval > 0 {
            create_dir(&ckpt_dir)?;
        }
        let init = Weights::init(&model).in_module("ovqe_net")?;
        let mut save_err = None;
        let result = train_from(init, &samples, &tc, |step, w| {
            if step % 50 == 0 {
                log::info!("step {step}");
            }
            save_weights(w, &ckpt_dir.join(format!("step{step:06}.ovqe"))).map_err(|e| {
                let msg = e.to_string();
                save_err = Some(e);
                ovqe_core::Error::Load(msg)
            })
        });
        if let Some(e) = save_err {
            return Err(e);
        }
        let out = result.in_module("training")?;
        let weights_path = self.cfg.weights.clone().unwrap_or_else(|| self.cfg.out.join("weights.ovqe"));
        save_weights(&out.weights, &weights_path)?;
        report::write_loss_csv(&self.cfg.out.join("loss.csv"), &out.losses)?;
        report::plot_loss(&self.cfg.out.join("loss.svg"), &out.losses)?;
        if let (Some(first), Some(last)) = (window_mean(&out.losses, true), window_mean(&out.losses, false)) {
            println!("loss {first:.6} -> {last:.6} over {} steps", out.losses.len());
        }
        println!("weights written to {}", weights_path.display());
        Ok(())
    }
}

/// Mean loss over the first or last tenth of the trace.
fn window_mean(l: &[LossRecord], head: bool) -> Option<f64> {
    if l.is_empty() {
        return None;
    }
    let n = (l.len() / 10).max(1);
    let part = if head { &l[..n] } else { &l[l.len() - n..] };
    Some(part.iter().map(|r| r.loss).sum::<f64>() / n as f64)
}
