//! Synthetic videos with a quality knob.
//!
//! Each video is a smooth clip plus `(1 − quality)·0.6·z` of independent
//! per-pixel Gaussian noise, clamped to `[-1, 1]`. The noise draw happens at
//! every quality, so two calls that differ only in quality share the clean clip.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::VideoRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NOISE_SCALE: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    /// A Gaussian blob moving on a straight line.
    MovingBlob,
    /// A drifting sinusoidal grating.
    GradientShift,
    /// A fixed pattern whose brightness pulses.
    Blink,
}

impl ToyKind {
    pub const ALL: [ToyKind; 3] = [ToyKind::MovingBlob, ToyKind::GradientShift, ToyKind::Blink];

    pub fn name(self) -> &'static str {
        match self {
            ToyKind::MovingBlob => "moving-blob",
            ToyKind::GradientShift => "gradient-shift",
            ToyKind::Blink => "blink",
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown toy kind {s:?} (expected moving-blob, gradient-shift or blink)"
                ))
            })
    }
}

fn clip(kind: ToyKind, rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Vec<f64> {
    let [f, c, h, w] = shape;
    let (hf, wf) = (h as f64, w as f64);
    let mut out = vec![0.0; f * c * h * w];
    let mut put = |fr: usize, ch: usize, y: usize, x: usize, v: f64| {
        out[((fr * c + ch) * h + y) * w + x] = v;
    };
    match kind {
        ToyKind::MovingBlob => {
            let (cy, cx) = (rng.gen_range(0.25..0.75) * hf, rng.gen_range(0.25..0.75) * wf);
            let (vy, vx) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let sigma = rng.gen_range(0.12..0.22) * hf.min(wf);
            let bg: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.6..-0.2)).collect();
            let amp: Vec<f64> = (0..c).map(|_| rng.gen_range(0.4..1.0)).collect();
            for fr in 0..f {
                let (py, px) = (cy + vy * fr as f64, cx + vx * fr as f64);
                for y in 0..h {
                    for x in 0..w {
                        let r2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
                        let g = (-r2 / (2.0 * sigma * sigma)).exp();
                        for ch in 0..c {
                            put(fr, ch, y, x, bg[ch] + amp[ch] * g);
                        }
                    }
                }
            }
        }
        ToyKind::GradientShift => {
            let tau = std::f64::consts::TAU;
            let (ky, kx) = (rng.gen_range(0.5..1.5) * tau / hf, rng.gen_range(0.5..1.5) * tau / wf);
            let omega = rng.gen_range(0.2..0.5);
            let phase: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..tau)).collect();
            for fr in 0..f {
                for y in 0..h {
                    for x in 0..w {
                        for ch in 0..c {
                            let a = ky * y as f64 + kx * x as f64 + omega * fr as f64 + phase[ch];
                            put(fr, ch, y, x, 0.7 * a.sin());
                        }
                    }
                }
            }
        }
        ToyKind::Blink => {
            let tau = std::f64::consts::TAU;
            let omega = rng.gen_range(0.3..0.8);
            let phi = rng.gen_range(0.0..tau);
            let pat: Vec<(f64, f64, f64)> = (0..c)
                .map(|_| {
                    (
                        rng.gen_range(0.5..1.5) * tau / hf,
                        rng.gen_range(0.5..1.5) * tau / wf,
                        rng.gen_range(0.0..tau),
                    )
                })
                .collect();
            for fr in 0..f {
                let b = 0.6 + 0.35 * (omega * fr as f64 + phi).sin();
                for y in 0..h {
                    for x in 0..w {
                        for (ch, &(py, px, p0)) in pat.iter().enumerate() {
                            let v = (py * y as f64 + p0).sin() * (px * x as f64).cos();
                            put(fr, ch, y, x, 0.9 * b * v);
                        }
                    }
                }
            }
        }
    }
    out
}

/// `count` videos of `kind` with geometry `shape = [F, C, H, W]`, ids
/// `{kind}_q{quality·100}_s{seed}_{i}`, and score = quality.
pub fn gen_toy_videos(
    kind: ToyKind,
    count: usize,
    condition: usize,
    seed: u64,
    quality: f64,
    shape: [usize; 4],
) -> Result<Vec<VideoRecord>> {
    if count == 0 {
        return Err(Error::invalid("toy video count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&quality) {
        return Err(Error::invalid(format!("quality must lie in [0, 1], got {quality}")));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!("video dimensions must be positive, got {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (1.0 - quality) * NOISE_SCALE;
    (0..count)
        .map(|i| {
            let base = clip(kind, &mut rng, shape);
            let data: Vec<f32> = base
                .into_iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    (v + noise * z).clamp(-1.0, 1.0) as f32
                })
                .collect();
            Ok(VideoRecord {
                id: format!(
                    "{}_q{:03}_s{}_{:04}",
                    kind.name(),
                    (quality * 100.0).round() as u32,
                    seed,
                    i
                ),
                condition,
                frames: Tensor::new(shape.to_vec(), data)?,
                score: Some(quality),
            })
        })
        .collect()
}
