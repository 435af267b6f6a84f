//! Planar YUV 4:2:0 pictures and sequences.
//!
//! The raw "I420" byte layout is the interchange format between codec,
//! network and metrics: per frame the Y plane row-major, then U, then V.
//! 8-bit samples take one byte, 10-bit samples two bytes little-endian.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// One plane of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    bit_depth: u8,
    samples: Vec<u16>,
}

impl Plane {
    pub fn new(width: usize, height: usize, bit_depth: u8, samples: Vec<u16>) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        if samples.len() != width * height {
            bail!(
                Argument,
                "plane {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                samples.len()
            );
        }
        let max = max_sample(bit_depth);
        if let Some(pos) = samples.iter().position(|&s| s > max) {
            bail!(
                Argument,
                "sample {} at index {} exceeds {}-bit range",
                samples[pos],
                pos,
                bit_depth
            );
        }
        Ok(Self { width, height, bit_depth, samples })
    }

    pub fn filled(width: usize, height: usize, bit_depth: u8, value: u16) -> Result<Self> {
        Self::new(width, height, bit_depth, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    /// Largest representable sample, `2^bit_depth - 1`.
    pub fn max_value(&self) -> u16 {
        max_sample(self.bit_depth)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.samples[y * self.width + x]
    }

    /// Mutable access to samples. Writes are clamped back into range by
    /// [`Plane::set`]; raw slice access is crate-internal.
    pub fn set(&mut self, x: usize, y: usize, value: u16) {
        self.samples[y * self.width + x] = value.min(self.max_value());
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [u16] {
        &mut self.samples
    }

    pub fn same_geometry(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height && self.bit_depth == other.bit_depth
    }
}

pub(crate) fn max_sample(bit_depth: u8) -> u16 {
    ((1u32 << bit_depth) - 1) as u16
}

fn check_bit_depth(bit_depth: u8) -> Result<()> {
    match bit_depth {
        8 | 10 => Ok(()),
        other => bail!(Argument, "unsupported bit depth {other} (expected 8 or 10)"),
    }
}

/// A decoded 4:2:0 picture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrame {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
    pub index: usize,
}

impl VideoFrame {
    pub fn new(y: Plane, u: Plane, v: Plane, index: usize) -> Result<Self> {
        if y.width % 2 != 0 || y.height % 2 != 0 {
            bail!(Argument, "luma dimensions {}x{} must be even", y.width, y.height);
        }
        for (name, c) in [("u", &u), ("v", &v)] {
            if c.width != y.width / 2 || c.height != y.height / 2 {
                bail!(
                    Argument,
                    "{name} plane is {}x{}, expected {}x{} for 4:2:0",
                    c.width,
                    c.height,
                    y.width / 2,
                    y.height / 2
                );
            }
            if c.bit_depth != y.bit_depth {
                bail!(Argument, "{name} plane bit depth differs from luma");
            }
        }
        Ok(Self { y, u, v, index })
    }

    /// Frame with every plane set to one value.
    pub fn filled(width: usize, height: usize, bit_depth: u8, value: u16, index: usize) -> Result<Self> {
        Self::new(
            Plane::filled(width, height, bit_depth, value)?,
            Plane::filled(width / 2, height / 2, bit_depth, value)?,
            Plane::filled(width / 2, height / 2, bit_depth, value)?,
            index,
        )
    }

    pub fn planes(&self) -> [&Plane; 3] {
        [&self.y, &self.u, &self.v]
    }
}

/// Returns a copy of the luma plane.
pub fn extract_luma(frame: &VideoFrame) -> Plane {
    frame.y.clone()
}

/// Ordered frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    frames: Vec<VideoFrame>,
    width: usize,
    height: usize,
    bit_depth: u8,
    frame_rate: f64,
}

impl Sequence {
    /// Builds a sequence, renumbering nothing: frame indices must already
    /// be `0..N`.
    pub fn new(frames: Vec<VideoFrame>, frame_rate: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            bail!(Argument, "sequence must contain at least one frame");
        };
        if !(frame_rate > 0.0) || !frame_rate.is_finite() {
            bail!(Argument, "frame rate must be positive, got {frame_rate}");
        }
        let (width, height, bit_depth) = (first.y.width, first.y.height, first.y.bit_depth);
        for (i, f) in frames.iter().enumerate() {
            if f.index != i {
                bail!(Argument, "frame {} carries index {}", i, f.index);
            }
            if f.y.width != width || f.y.height != height || f.y.bit_depth != bit_depth {
                bail!(Argument, "frame {i} geometry differs from frame 0");
            }
        }
        Ok(Self { frames, width, height, bit_depth, frame_rate })
    }

    pub fn frames(&self) -> &[VideoFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn into_frames(self) -> Vec<VideoFrame> {
        self.frames
    }

    /// Same length, geometry and bit depth.
    pub fn matches(&self, other: &Sequence) -> bool {
        self.len() == other.len()
            && self.width == other.width
            && self.height == other.height
            && self.bit_depth == other.bit_depth
    }

    /// Bytes of one I420 frame at this geometry.
    pub fn frame_bytes(&self) -> usize {
        frame_bytes(self.width, self.height, self.bit_depth)
    }

    /// Decodes concatenated I420 frames.
    pub fn from_i420_bytes(
        bytes: &[u8],
        width: usize,
        height: usize,
        bit_depth: u8,
        frame_rate: f64,
        max_frames: Option<usize>,
    ) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            bail!(Argument, "dimensions {width}x{height} must be non-zero and even");
        }
        let per_frame = frame_bytes(width, height, bit_depth);
        let rem = bytes.len() % per_frame;
        if rem != 0 {
            bail!(
                Format,
                "{} bytes is not a whole number of {}-byte frames ({} bytes short of the next frame)",
                bytes.len(),
                per_frame,
                per_frame - rem
            );
        }
        let available = bytes.len() / per_frame;
        let count = max_frames.map_or(available, |m| m.min(available));
        let bps = bytes_per_sample(bit_depth);
        let max = max_sample(bit_depth);
        let mut frames = Vec::with_capacity(count);
        for index in 0..count {
            let mut cursor = &bytes[index * per_frame..(index + 1) * per_frame];
            let mut planes = Vec::with_capacity(3);
            for (w, h) in [(width, height), (width / 2, height / 2), (width / 2, height / 2)] {
                let n = w * h;
                let (chunk, rest) = cursor.split_at(n * bps);
                cursor = rest;
                let samples: Vec<u16> = if bps == 1 {
                    chunk.iter().map(|&b| b as u16).collect()
                } else {
                    chunk.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
                };
                if let Some(pos) = samples.iter().position(|&s| s > max) {
                    bail!(
                        Format,
                        "frame {index}: sample value {} exceeds the {bit_depth}-bit range",
                        samples[pos]
                    );
                }
                planes.push(Plane { width: w, height: h, bit_depth, samples });
            }
            let v = planes.pop().unwrap();
            let u = planes.pop().unwrap();
            let y = planes.pop().unwrap();
            frames.push(VideoFrame { y, u, v, index });
        }
        Self::new(frames, frame_rate)
    }

    /// Encodes every frame as concatenated I420.
    pub fn to_i420_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frame_bytes() * self.len());
        let wide = self.bit_depth > 8;
        for f in &self.frames {
            for p in f.planes() {
                if wide {
                    for s in &p.samples {
                        out.extend_from_slice(&s.to_le_bytes());
                    }
                } else {
                    out.extend(p.samples.iter().map(|&s| s as u8));
                }
            }
        }
        out
    }

    /// Replaces every frame's luma, keeping chroma and metadata.
    pub fn with_luma(&self, luma: Vec<Plane>) -> Result<Self> {
        if luma.len() != self.len() {
            bail!(Pairing, "{} luma planes for {} frames", luma.len(), self.len());
        }
        let frames = self
            .frames
            .iter()
            .zip(luma)
            .map(|(f, y)| VideoFrame::new(y, f.u.clone(), f.v.clone(), f.index))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, self.frame_rate)
    }
}

fn bytes_per_sample(bit_depth: u8) -> usize {
    if bit_depth > 8 {
        2
    } else {
        1
    }
}

/// Bytes of one I420 frame: `w*h*1.5` samples.
pub fn frame_bytes(width: usize, height: usize, bit_depth: u8) -> usize {
    (width * height + 2 * (width / 2) * (height / 2)) * bytes_per_sample(bit_depth)
}
