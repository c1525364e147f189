//! Deterministic synthetic video: oriented sinusoids plus a checkerboard,
//! moved by a fixed subpixel velocity (or a slow pattern rotation) per frame.
//! A desk-scale stand-in for real training footage.

use crate::data::FrameSequence;
use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    /// Constant translation in pixels per frame.
    Shift { vx: f64, vy: f64 },
    /// Rotate the pattern coordinates around the frame center, radians per
    /// frame.
    RotatePattern { omega: f64 },
}

impl Motion {
    /// Default drift used by the trainer.
    pub fn default_shift() -> Self {
        Motion::Shift { vx: 0.6, vy: -0.4 }
    }
}

struct Pattern {
    // (fx, fy, phase, channel_shift) per sinusoid
    waves: Vec<(f64, f64, f64, f64)>,
    checker_cells: f64,
}

impl Pattern {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..3)
            .map(|_| {
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                let freq = rng.gen_range(0.25..0.9);
                (
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.0..1.5),
                )
            })
            .collect();
        Pattern {
            waves,
            checker_cells: 8.0,
        }
    }

    fn value(&self, u: f64, v: f64, channel: usize) -> f64 {
        let mut s = 0.0;
        for &(fx, fy, phase, cshift) in &self.waves {
            s += 0.2 * (fx * u + fy * v + phase + cshift * channel as f64).sin();
        }
        let cell = ((u / self.checker_cells).floor() + (v / self.checker_cells).floor())
            .rem_euclid(2.0);
        0.5 + 0.5 * s + 0.2 * (cell - 0.5)
    }
}

/// Generate `n` frames of h x w synthetic HR video in [0,1]. Deterministic
/// for a given seed.
pub fn make_synthetic_sequence<E: Scalar>(
    n: usize,
    h: usize,
    w: usize,
    motion: Motion,
    seed: u64,
) -> Result<FrameSequence<E>> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(CtunError::arg(
            "make_synthetic_sequence",
            format!("dims {h}x{w} must be divisible by 4"),
        ));
    }
    let pattern = Pattern::new(seed);
    let shape = Shape::new(1, 3, h, w);
    let frames = (0..n)
        .map(|t| {
            let mut data = vec![E::ZERO; shape.count()];
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let (u, v) = match motion {
                            Motion::Shift { vx, vy } => {
                                (x as f64 - vx * t as f64, y as f64 - vy * t as f64)
                            }
                            Motion::RotatePattern { omega } => {
                                let cx = w as f64 / 2.0;
                                let cy = h as f64 / 2.0;
                                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                                let a = -omega * t as f64;
                                (
                                    cx + dx * a.cos() - dy * a.sin(),
                                    cy + dx * a.sin() + dy * a.cos(),
                                )
                            }
                        };
                        data[shape.index(0, c, y, x)] =
                            E::from_f64(pattern.value(u, v, c).clamp(0.0, 1.0));
                    }
                }
            }
            Tensor::from_vec(data, shape)
        })
        .collect();
    FrameSequence::new(frames, format!("synthetic(seed={seed})"))
}
