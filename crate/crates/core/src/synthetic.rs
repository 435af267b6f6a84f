//! Deterministic synthetic test clips.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand::{RngCore, SeedableRng};

use crate::frame::{Plane, Sequence, VideoFrame};

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

struct Wave {
    kx: f64,
    ky: f64,
    amp: f64,
    phase: f64,
}

struct Disk {
    cx: f64,
    cy: f64,
    r: f64,
    level: f64,
}

/// An 8-bit clip of a sinusoidal texture plus a few hard-edged disks, all
/// translating by a sub-pixel velocity each frame.
///
/// `width` and `height` must be even.
pub fn moving_texture(frames: usize, width: usize, height: usize, seed: u64) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Wave> = (0..5)
        .map(|_| {
            let freq = 0.02 + 0.12 * unit(&mut rng);
            let angle = 2.0 * PI * unit(&mut rng);
            Wave {
                kx: freq * libm::cos(angle),
                ky: freq * libm::sin(angle),
                amp: 12.0 + 18.0 * unit(&mut rng),
                phase: 2.0 * PI * unit(&mut rng),
            }
        })
        .collect();
    let disks: Vec<Disk> = (0..4)
        .map(|_| Disk {
            cx: width as f64 * unit(&mut rng),
            cy: height as f64 * unit(&mut rng),
            r: 4.0 + 0.15 * width.min(height) as f64 * unit(&mut rng),
            level: 60.0 * (unit(&mut rng) - 0.5),
        })
        .collect();
    let (vx, vy) = (0.75 + 0.5 * unit(&mut rng), 0.25 + 0.5 * unit(&mut rng));

    let luma_at = |x: f64, y: f64| -> f64 {
        let mut v = 128.0;
        for w in &waves {
            v += w.amp * libm::sin(2.0 * PI * (w.kx * x + w.ky * y) + w.phase);
        }
        for d in &disks {
            let (dx, dy) = (x - d.cx, y - d.cy);
            if dx * dx + dy * dy < d.r * d.r {
                v += d.level;
            }
        }
        v
    };

    let out: Vec<VideoFrame> = (0..frames)
        .map(|t| {
            let (ox, oy) = (vx * t as f64, vy * t as f64);
            let y: Vec<u16> = (0..height)
                .flat_map(|r| (0..width).map(move |c| (r, c)))
                .map(|(r, c)| quantize8(luma_at(c as f64 - ox, r as f64 - oy)))
                .collect();
            let (cw, ch) = (width / 2, height / 2);
            let u: Vec<u16> = (0..ch)
                .flat_map(|r| (0..cw).map(move |c| (r, c)))
                .map(|(r, c)| quantize8(112.0 + 24.0 * libm::sin((c as f64 - ox / 2.0) * 0.2) + r as f64 * 0.3))
                .collect();
            let v: Vec<u16> = (0..ch)
                .flat_map(|r| (0..cw).map(move |c| (r, c)))
                .map(|(r, c)| quantize8(140.0 - 20.0 * libm::cos((r as f64 - oy / 2.0) * 0.25) - c as f64 * 0.2))
                .collect();
            VideoFrame::new(
                Plane::new(width, height, 8, y).expect("in range"),
                Plane::new(cw, ch, 8, u).expect("in range"),
                Plane::new(cw, ch, 8, v).expect("in range"),
                t,
            )
            .expect("even geometry")
        })
        .collect();
    Sequence::new(out, 30.0).expect("non-empty clip")
}

fn quantize8(v: f64) -> u16 {
    libm::round(v).clamp(0.0, 255.0) as u16
}
