//! Bicubic resampling, Gaussian blur, and the BI/BD degradation pipeline.
//!
//! `bicubic_resize` pins the MATLAB `imresize` semantics: cubic kernel with
//! a = -0.5, half-pixel centers, edge clamping, per-output-pixel weight
//! normalization, and, when downscaling with antialias, kernel support
//! widened by 1/scale. These operations feed data preparation and evaluation
//! baselines; they do not participate in gradient computation.

use super::{DegradationSpec, FrameSequence};
use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Cubic interpolation kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        (1.5 * ax - 2.5) * ax * ax + 1.0
    } else if ax < 2.0 {
        ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-pixel source taps for one axis: clamped indices and normalized
/// weights.
fn contributions(in_n: usize, out_n: usize, scale: f64, antialias: bool) -> Vec<Vec<(usize, f64)>> {
    let kscale = if antialias && scale < 1.0 { scale } else { 1.0 };
    let width = 4.0 / kscale;
    let taps = width.ceil() as isize + 2;
    (0..out_n)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(taps as usize);
            let mut total = 0.0;
            for t in 0..taps {
                let j = left + t;
                let w = cubic((u - j as f64) * kscale) * kscale;
                if w == 0.0 {
                    continue;
                }
                total += w;
                let idx = j.clamp(0, in_n as isize - 1) as usize;
                entries.push((idx, w));
            }
            for e in entries.iter_mut() {
                e.1 /= total;
            }
            entries
        })
        .collect()
}

fn resample_axis<E: Scalar>(
    src: &[E],
    shape: Shape,
    taps: &[Vec<(usize, f64)>],
    vertical: bool,
) -> (Vec<E>, Shape) {
    let out_shape = if vertical {
        Shape::new(shape.n, shape.c, taps.len(), shape.w)
    } else {
        Shape::new(shape.n, shape.c, shape.h, taps.len())
    };
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            if vertical {
                for (oh, tap) in taps.iter().enumerate() {
                    for ow in 0..shape.w {
                        let mut acc = 0.0;
                        for &(ih, w) in tap {
                            acc += w * src[shape.index(n, c, ih, ow)].to_f64();
                        }
                        out[out_shape.index(n, c, oh, ow)] = E::from_f64(acc);
                    }
                }
            } else {
                for oh in 0..shape.h {
                    for (ow, tap) in taps.iter().enumerate() {
                        let mut acc = 0.0;
                        for &(iw, w) in tap {
                            acc += w * src[shape.index(n, c, oh, iw)].to_f64();
                        }
                        out[out_shape.index(n, c, oh, ow)] = E::from_f64(acc);
                    }
                }
            }
        }
    }
    (out, out_shape)
}

/// Separable bicubic resampling (vertical pass, then horizontal).
pub fn bicubic_resize<E: Scalar>(x: &Tensor<E>, scale: f64, antialias: bool) -> Result<Tensor<E>> {
    if scale <= 0.0 {
        return Err(CtunError::arg("bicubic_resize", "scale must be > 0"));
    }
    let xs = x.shape();
    let oh = (xs.h as f64 * scale).ceil() as usize;
    let ow = (xs.w as f64 * scale).ceil() as usize;
    if oh == 0 || ow == 0 {
        return Err(CtunError::arg(
            "bicubic_resize",
            format!("output size {oh}x{ow} is degenerate"),
        ));
    }
    let rows = contributions(xs.h, oh, scale, antialias);
    let cols = contributions(xs.w, ow, scale, antialias);
    let (tmp, tmp_shape) = resample_axis(&x.data(), xs, &rows, true);
    let (out, out_shape) = resample_axis(&tmp, tmp_shape, &cols, false);
    Ok(Tensor::from_vec(out, out_shape))
}

/// Normalized 1-D Gaussian taps with radius round(4*sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5).floor() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= total;
    }
    k
}

/// Reflect indexing: ...3 2 1 0 | 0 1 2 3 ... n-1 | n-1 n-2...
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur<E: Scalar>(x: &Tensor<E>, sigma: f64) -> Result<Tensor<E>> {
    if sigma <= 0.0 {
        return Err(CtunError::arg("gaussian_blur", "sigma must be > 0"));
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let xs = x.shape();
    let xd = x.data();
    let mut tmp = vec![0.0f64; xs.count()];
    // vertical
    for n in 0..xs.n {
        for c in 0..xs.c {
            for h in 0..xs.h {
                for w in 0..xs.w {
                    let mut acc = 0.0;
                    for (t, &kv) in k.iter().enumerate() {
                        let ih = reflect(h as isize + t as isize - radius, xs.h);
                        acc += kv * xd[xs.index(n, c, ih, w)].to_f64();
                    }
                    tmp[xs.index(n, c, h, w)] = acc;
                }
            }
        }
    }
    // horizontal
    let mut out = vec![E::ZERO; xs.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            for h in 0..xs.h {
                for w in 0..xs.w {
                    let mut acc = 0.0;
                    for (t, &kv) in k.iter().enumerate() {
                        let iw = reflect(w as isize + t as isize - radius, xs.w);
                        acc += kv * tmp[xs.index(n, c, h, iw)];
                    }
                    out[xs.index(n, c, h, w)] = E::from_f64(acc);
                }
            }
        }
    }
    Ok(Tensor::from_vec(out, xs))
}

fn decimate<E: Scalar>(x: &Tensor<E>, scale: usize) -> Tensor<E> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, xs.c, xs.h / scale, xs.w / scale);
    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            for h in 0..out_shape.h {
                for w in 0..out_shape.w {
                    out[out_shape.index(n, c, h, w)] = xd[xs.index(n, c, h * scale, w * scale)];
                }
            }
        }
    }
    Tensor::from_vec(out, out_shape)
}

fn clamp_unit<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let out: Vec<E> = x
        .data()
        .iter()
        .map(|&v| v.max(E::ZERO).min(E::ONE))
        .collect();
    Tensor::from_vec(out, x.shape())
}

/// Synthesize an LR sequence from an HR one. Pure and deterministic; the
/// result is clamped to [0,1].
pub fn degrade<E: Scalar>(seq: &FrameSequence<E>, spec: DegradationSpec) -> Result<FrameSequence<E>> {
    spec.validate()?;
    let scale = spec.scale();
    let mut frames = Vec::with_capacity(seq.len());
    for (i, f) in seq.frames.iter().enumerate() {
        let fs = f.shape();
        if fs.h % scale != 0 || fs.w % scale != 0 {
            return Err(CtunError::arg(
                "degrade",
                format!("frame {i} is {}x{}, not divisible by scale {scale}", fs.h, fs.w),
            ));
        }
        let lr = match spec {
            DegradationSpec::Bicubic { .. } => bicubic_resize(f, 1.0 / scale as f64, true)?,
            DegradationSpec::BlurDown { sigma, .. } => decimate(&gaussian_blur(f, sigma)?, scale),
        };
        frames.push(clamp_unit(&lr));
    }
    Ok(FrameSequence {
        frames,
        fps: seq.fps,
        source: seq.source.clone(),
    })
}
