//! Efficiency profiling: runs sequence inference on synthetic frames and
//! reports parameters, analytic FLOPs, measured MACs, peak live tensor
//! bytes, and wall time per frame.

use super::flops::count_flops;
use crate::error::Result;
use crate::model::{param_count, CtunModel};
use crate::tensor::{self, Shape, Tensor};
use serde::Serialize;
use std::fmt;
use std::time::Instant;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProfileReport {
    /// Model parameter count.
    pub params: u64,
    /// Analytic FLOPs for one frame at the profiled size.
    pub flops_analytic: u64,
    /// Convolution MACs recorded by the kernels over the whole run.
    pub macs_measured: u64,
    /// Peak live tensor payload bytes during the run.
    pub peak_bytes: u64,
    /// Average wall-clock time per frame.
    pub wall_ms_per_frame: f64,
}

impl fmt::Display for ProfileReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>14}", "params", self.params)?;
        writeln!(f, "{:<22} {:>14}", "flops/frame (analytic)", self.flops_analytic)?;
        writeln!(f, "{:<22} {:>14}", "macs (measured)", self.macs_measured)?;
        writeln!(f, "{:<22} {:>14}", "peak bytes", self.peak_bytes)?;
        write!(f, "{:<22} {:>14.3}", "ms/frame", self.wall_ms_per_frame)
    }
}

/// Deterministic synthetic frame for profiling runs.
fn synthetic_frame(t: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let shape = Shape::new(1, 3, h, w);
    let mut data = vec![0.0f32; shape.count()];
    let phase = (seed % 977) as f64 * 0.013;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = 0.5
                    + 0.25 * ((0.31 * x as f64 + 0.17 * y as f64 + 0.05 * t as f64 + phase).sin())
                    + 0.15 * ((0.11 * x as f64 - 0.23 * y as f64 + c as f64).cos());
                data[shape.index(0, c, y, x)] = v as f32;
            }
        }
    }
    Tensor::from_vec(data, shape)
}

/// Run `n` frames of H x W synthetic video through the model, streaming
/// frames in and discarding outputs after a checksum touch, and report the
/// efficiency figures. Deterministic for a given seed.
pub fn profile_inference(
    model: &CtunModel<f32>,
    n: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<ProfileReport> {
    tensor::reset_macs();
    tensor::reset_peak();
    let mut checksum = 0.0f64;
    let start = Instant::now();
    model.super_resolve_with(
        n,
        |t| Ok(synthetic_frame(t, h, w, seed)),
        |_, y| {
            // touch the output so the frame is fully materialized, then drop it
            checksum += y.data().iter().take(16).map(|v| *v as f64).sum::<f64>();
            Ok(())
        },
    )?;
    let elapsed = start.elapsed().as_secs_f64();
    let _ = checksum;
    Ok(ProfileReport {
        params: param_count(model.config()) as u64,
        flops_analytic: count_flops(model.config(), h, w).total(),
        macs_measured: tensor::macs(),
        peak_bytes: tensor::peak_bytes() as u64,
        wall_ms_per_frame: elapsed * 1000.0 / n as f64,
    })
}
