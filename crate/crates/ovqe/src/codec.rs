//! External encoder/decoder subprocesses and codec selection.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use ovqe_core::codec::{bitrate_kbps, check_integrity, Codec, CodecResult, MockCodec, MOCK_QP_MAX};
use ovqe_core::frame::Sequence;

use crate::error::{Error, InModule, Result};
use crate::io::{read_yuv420, write_yuv420, YuvFormat};

pub const EXTERNAL_QP_MAX: i32 = 63;
pub const ENCODER_ENV: &str = "OVQE_ENCODER";
pub const DECODER_ENV: &str = "OVQE_DECODER";

/// Encoder arguments used when none are configured. Placeholders in
/// braces are substituted per call.
pub const DEFAULT_ENCODER_ARGS: &[&str] = &[
    "-i", "{input}", "-s", "{width}x{height}", "-r", "{fps}", "-c", "{chroma}", "--qp", "{qp}", "-f", "{frames}",
    "--preset", "fast", "--gopsize", "8", "--refreshsec", "0", "-o", "{bitstream}",
];
pub const DEFAULT_DECODER_ARGS: &[&str] = &["-b", "{bitstream}", "-o", "{output}", "-d", "{bitdepth}"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSpec {
    pub encoder: PathBuf,
    pub decoder: PathBuf,
    pub encoder_args: Vec<String>,
    pub decoder_args: Vec<String>,
    /// Appended to the encoder command line.
    pub extra_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodecSpec {
    Mock,
    External(ExternalSpec),
}

impl CodecSpec {
    pub fn qp_max(&self) -> i32 {
        match self {
            CodecSpec::Mock => MOCK_QP_MAX,
            CodecSpec::External(_) => EXTERNAL_QP_MAX,
        }
    }

    pub fn check_qp(&self, qp: i32) -> Result<()> {
        if !(0..=self.qp_max()).contains(&qp) {
            return Err(Error::Config(format!("QP {qp} outside 0..={} for this codec", self.qp_max())));
        }
        Ok(())
    }

    /// Builds a codec that keeps its scratch files under `workdir`.
    pub fn build(&self, workdir: &Path, keep_temp: bool) -> Result<Box<dyn Codec>> {
        Ok(match self {
            CodecSpec::Mock => Box::new(MockCodec),
            CodecSpec::External(spec) => Box::new(ExternalCodec::new(spec.clone(), workdir, keep_temp)?),
        })
    }
}

/// Looks `program` up on `PATH` unless it already names a file.
pub fn resolve_binary(program: &Path) -> Result<PathBuf> {
    which::which(program).map_err(|e| Error::Codec(format!("cannot find executable {}: {e}", program.display())))
}

#[derive(Debug)]
pub struct ExternalCodec {
    spec: ExternalSpec,
    encoder: PathBuf,
    decoder: PathBuf,
    workdir: PathBuf,
    keep_temp: bool,
}

fn substitute(template: &[String], vars: &HashMap<&str, String>) -> Vec<String> {
    template
        .iter()
        .map(|arg| {
            let mut out = arg.clone();
            for (k, v) in vars {
                out = out.replace(&format!("{{{k}}}"), v);
            }
            out
        })
        .collect()
}

fn run(program: &Path, args: &[String], what: &str) -> Result<()> {
    log::debug!("{what}: {} {}", program.display(), args.join(" "));
    let out = Command::new(program)
        .args(args)
        .output()
        .map_err(|e| Error::Codec(format!("failed to start {what} {}: {e}", program.display())))?;
    if !out.status.success() {
        let mut diag = String::from_utf8_lossy(&out.stderr).into_owned();
        diag.push_str(&String::from_utf8_lossy(&out.stdout));
        return Err(Error::Codec(format!("{what} exited with {}: {}", out.status, diag.trim())));
    }
    Ok(())
}

impl ExternalCodec {
    pub fn new(spec: ExternalSpec, workdir: &Path, keep_temp: bool) -> Result<Self> {
        let encoder = resolve_binary(&spec.encoder)?;
        let decoder = resolve_binary(&spec.decoder)?;
        Ok(Self { spec, encoder, decoder, workdir: workdir.to_path_buf(), keep_temp })
    }

    fn round_trip(&self, seq: &Sequence, qp: i32, dir: &Path) -> Result<CodecResult> {
        let input = dir.join("input.yuv");
        let bitstream = dir.join("stream.bin");
        let output = dir.join("decoded.yuv");
        write_yuv420(seq, &input)?;
        let chroma = if seq.bit_depth() > 8 { "yuv420_10" } else { "yuv420" };
        let vars: HashMap<&str, String> = [
            ("input", input.display().to_string()),
            ("bitstream", bitstream.display().to_string()),
            ("output", output.display().to_string()),
            ("width", seq.width().to_string()),
            ("height", seq.height().to_string()),
            ("fps", format!("{}", seq.frame_rate())),
            ("qp", qp.to_string()),
            ("bitdepth", seq.bit_depth().to_string()),
            ("frames", seq.len().to_string()),
            ("chroma", chroma.to_string()),
        ]
        .into_iter()
        .collect();
        let mut enc_args = substitute(&self.spec.encoder_args, &vars);
        enc_args.extend(substitute(&self.spec.extra_flags, &vars));
        run(&self.encoder, &enc_args, "encoder")?;
        let bytes = std::fs::metadata(&bitstream)
            .map_err(|e| Error::Codec(format!("encoder produced no bitstream at {}: {e}", bitstream.display())))?
            .len();
        run(&self.decoder, &substitute(&self.spec.decoder_args, &vars), "decoder")?;
        let format = YuvFormat {
            width: seq.width(),
            height: seq.height(),
            bit_depth: seq.bit_depth(),
            frame_rate: seq.frame_rate(),
        };
        let decoded = read_yuv420(&output, format, None).map_err(|e| match e {
            Error::Io { .. } => Error::Codec(format!("decoder output unreadable: {e}")),
            Error::Core { source: ovqe_core::Error::Format(msg), .. } => {
                Error::Core { module: "codec_bridge", source: ovqe_core::Error::Integrity(msg) }
            }
            other => other,
        })?;
        check_integrity(seq, &decoded).in_module("codec_bridge")?;
        Ok(CodecResult { decoded, bitrate_kbps: bitrate_kbps(bytes, seq.frame_rate(), seq.len()), bitstream_bytes: bytes })
    }

    fn encode_decode_std(&self, seq: &Sequence, qp: i32) -> Result<CodecResult> {
        if !(0..=EXTERNAL_QP_MAX).contains(&qp) {
            return Err(Error::Core {
                module: "codec_bridge",
                source: ovqe_core::Error::Argument(format!("QP {qp} outside 0..={EXTERNAL_QP_MAX}")),
            });
        }
        let dir = tempfile::Builder::new()
            .prefix(&format!("ovqe-qp{qp}-"))
            .tempdir_in(&self.workdir)
            .map_err(|e| Error::io(&self.workdir, e))?;
        let result = self.round_trip(seq, qp, dir.path());
        if self.keep_temp {
            let kept = dir.keep();
            log::info!("kept codec scratch files in {}", kept.display());
        }
        result
    }
}

impl Codec for ExternalCodec {
    fn encode_decode(&mut self, seq: &Sequence, qp: i32) -> ovqe_core::Result<CodecResult> {
        self.encode_decode_std(seq, qp).map_err(|e| match e {
            Error::Core { source, .. } => source,
            other => ovqe_core::Error::Codec(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_substitution() {
        let vars: HashMap<&str, String> = [("qp", "37".to_string()), ("width", "64".to_string())].into_iter().collect();
        let t = vec!["--qp={qp}".to_string(), "{width}x{width}".to_string(), "{other}".to_string()];
        assert_eq!(substitute(&t, &vars), ["--qp=37", "64x64", "{other}"]);
    }

    #[test]
    fn qp_ranges() {
        assert!(CodecSpec::Mock.check_qp(51).is_ok());
        assert!(CodecSpec::Mock.check_qp(52).is_err());
        let ext = CodecSpec::External(ExternalSpec {
            encoder: "enc".into(),
            decoder: "dec".into(),
            encoder_args: vec![],
            decoder_args: vec![],
            extra_flags: vec![],
        });
        assert!(ext.check_qp(63).is_ok());
        assert!(ext.check_qp(64).is_err());
        assert!(ext.check_qp(-1).is_err());
    }

    #[test]
    fn missing_binary_is_codec_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExternalSpec {
            encoder: dir.path().join("no-such-encoder"),
            decoder: dir.path().join("no-such-decoder"),
            encoder_args: vec![],
            decoder_args: vec![],
            extra_flags: vec![],
        };
        let err = ExternalCodec::new(spec, dir.path(), false).unwrap_err();
        assert!(matches!(err, Error::Codec(_)));
        assert_eq!(err.exit_code(), 3);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
