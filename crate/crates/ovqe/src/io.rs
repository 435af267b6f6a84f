//! Raw planar YUV 4:2:0 files.

use std::fs;
use std::path::Path;

use ovqe_core::frame::{frame_bytes, Sequence};

use crate::error::{Error, InModule, Result};

/// Geometry of a headerless YUV file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YuvFormat {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub frame_rate: f64,
}

pub fn read_yuv420(path: &Path, format: YuvFormat, max_frames: Option<usize>) -> Result<Sequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Sequence::from_i420_bytes(&bytes, format.width, format.height, format.bit_depth, format.frame_rate, max_frames)
        .in_module("frame_io")
}

pub fn write_yuv420(seq: &Sequence, path: &Path) -> Result<()> {
    fs::write(path, seq.to_i420_bytes()).map_err(|e| Error::io(path, e))
}

/// Frames held by a file, failing if its size is not a whole number of frames.
pub fn count_frames(path: &Path, format: YuvFormat) -> Result<usize> {
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    let per = frame_bytes(format.width, format.height, format.bit_depth);
    if per == 0 {
        return Err(Error::Config(format!("{}: zero-sized frame geometry", path.display())));
    }
    if len % per != 0 {
        return Err(Error::Config(format!(
            "{}: {} bytes is not a multiple of the {}-byte frame size ({} bytes short of the next frame)",
            path.display(),
            len,
            per,
            per - len % per
        )));
    }
    Ok(len / per)
}
