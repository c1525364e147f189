//! Tensor kernels: convolution, normalization, resampling, rearrangement,
//! elementwise math, and reductions. Every operation here is differentiable
//! unless noted otherwise.
//!
//! Convolution uses the cross-correlation convention with zero padding. For
//! stride 1 the kernel runs on zero-padded planes whose row stride matches
//! the output accumulator, so each kernel tap is one long contiguous
//! multiply-add pass. Per output element the accumulation order is
//! bias, then (ci, kh, kw) — the same order as the naive nested loop, so
//! results are bit-identical to a direct implementation at any width.

use super::{add_macs, Scalar, Shape, Tensor};
use crate::error::{CtunError, Result};

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

fn conv_out_dim(in_dim: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = in_dim + 2 * pad;
    if padded < k {
        return Err(CtunError::shape(
            "conv2d",
            format!("input extent {in_dim} with pad {pad} is smaller than kernel {k}"),
        ));
    }
    if (padded - k) % stride != 0 {
        return Err(CtunError::arg(
            "conv2d",
            format!("(dim {in_dim} + 2*{pad} - {k}) is not divisible by stride {stride}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

fn check_conv_args<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<(Shape, Shape)> {
    let xs = x.shape();
    let ws = w.shape(); // (co, ci, kh, kw)
    if stride == 0 {
        return Err(CtunError::arg("conv2d", "stride must be >= 1"));
    }
    if ws.h % 2 == 0 || ws.w % 2 == 0 {
        return Err(CtunError::arg(
            "conv2d",
            format!("kernel dims must be odd, got {}x{}", ws.h, ws.w),
        ));
    }
    if xs.c != ws.c {
        return Err(CtunError::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", xs.c, ws.c),
        ));
    }
    if b.shape().count() != ws.n {
        return Err(CtunError::shape(
            "conv2d",
            format!(
                "bias has {} elements, kernel has {} output channels",
                b.shape().count(),
                ws.n
            ),
        ));
    }
    let oh = conv_out_dim(xs.h, ws.h, stride, pad)?;
    let ow = conv_out_dim(xs.w, ws.w, stride, pad)?;
    Ok((Shape::new(xs.n, ws.n, oh, ow), ws))
}

/// Copy a plane into a zero-padded buffer of row stride `w + 2*pad`.
fn pad_plane<E: Scalar>(src: &[E], h: usize, w: usize, pad: usize, dst: &mut [E]) {
    let w2 = w + 2 * pad;
    for row in 0..h {
        let d = (row + pad) * w2 + pad;
        dst[d..d + w].copy_from_slice(&src[row * w..(row + 1) * w]);
    }
}

/// One tap: dst[i] += wv * src[i] over a flat run.
#[inline]
fn tap_axpy<E: Scalar>(dst: &mut [E], src: &[E], wv: E) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = d.add(wv.mul(*s));
    }
}

/// Three horizontal taps chained in sequential order (bit-identical to three
/// separate `tap_axpy` passes, with one store per element).
#[inline]
fn tap_axpy3<E: Scalar>(dst: &mut [E], s0: &[E], s1: &[E], s2: &[E], w0: E, w1: E, w2: E) {
    let n = dst.len();
    let (s0, s1, s2) = (&s0[..n], &s1[..n], &s2[..n]);
    for i in 0..n {
        let t0 = dst[i].add(w0.mul(s0[i]));
        let t1 = t0.add(w1.mul(s1[i]));
        dst[i] = t1.add(w2.mul(s2[i]));
    }
}

/// Stride-1 convolution core on padded planes.
///
/// `src_p`: `ci_n` zero-padded planes of `hp x w2`; `weights(o, i)` yields the
/// `kh*kw` taps for that channel pair; writes `co_n` output runs of
/// `run_len = (oh-1)*w2 + ow` initialized with the bias.
#[allow(clippy::too_many_arguments)]
fn conv_stride1_core<'w, E: Scalar + 'w>(
    src_p: &[E],
    plane_in: usize,
    w2: usize,
    ci_n: usize,
    co_n: usize,
    kh_n: usize,
    kw_n: usize,
    run_len: usize,
    weights: &dyn Fn(usize, usize) -> &'w [E],
    bias: &dyn Fn(usize) -> E,
    out: &mut Vec<E>,
) {
    out.clear();
    out.resize(co_n * run_len, E::ZERO);
    for co in 0..co_n {
        let bv = bias(co);
        for d in out[co * run_len..(co + 1) * run_len].iter_mut() {
            *d = bv;
        }
        for ci in 0..ci_n {
            let taps = weights(co, ci);
            let base = ci * plane_in;
            for kh in 0..kh_n {
                let ib = base + kh * w2;
                if kw_n == 3 {
                    let dst = &mut out[co * run_len..(co + 1) * run_len];
                    tap_axpy3(
                        dst,
                        &src_p[ib..ib + run_len],
                        &src_p[ib + 1..ib + 1 + run_len],
                        &src_p[ib + 2..ib + 2 + run_len],
                        taps[kh * 3],
                        taps[kh * 3 + 1],
                        taps[kh * 3 + 2],
                    );
                } else {
                    for kw in 0..kw_n {
                        let dst = &mut out[co * run_len..(co + 1) * run_len];
                        let s = &src_p[ib + kw..ib + kw + run_len];
                        tap_axpy(dst, s, taps[kh * kw_n + kw]);
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    w2: usize,
    plane_in: usize,
    run_len: usize,
}

fn conv_geom(h: usize, w: usize, k_h: usize, k_w: usize, pad: usize) -> ConvGeom {
    let w2 = w + 2 * pad;
    let hp = h + 2 * pad;
    let oh = hp - k_h + 1;
    let ow = w2 - k_w + 1;
    ConvGeom {
        w2,
        plane_in: hp * w2,
        run_len: (oh - 1) * w2 + ow,
    }
}

fn conv2d_forward<E: Scalar>(
    x: &[E],
    xs: Shape,
    w: &[E],
    ws: Shape,
    b: &[E],
    stride: usize,
    pad: usize,
    out_shape: Shape,
) -> Vec<E> {
    let mut out = vec![E::ZERO; out_shape.count()];
    if stride == 1 {
        let g = conv_geom(xs.h, xs.w, ws.h, ws.w, pad);
        let k_taps = ws.h * ws.w;
        let mut src_p;
        let mut acc: Vec<E> = Vec::new();
        for n in 0..xs.n {
            let planes = &x[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w];
            let src: &[E] = if pad == 0 {
                planes
            } else {
                src_p = vec![E::ZERO; xs.c * g.plane_in];
                for ci in 0..xs.c {
                    pad_plane(
                        &planes[ci * xs.h * xs.w..(ci + 1) * xs.h * xs.w],
                        xs.h,
                        xs.w,
                        pad,
                        &mut src_p[ci * g.plane_in..(ci + 1) * g.plane_in],
                    );
                }
                &src_p
            };
            conv_stride1_core(
                src,
                g.plane_in,
                g.w2,
                xs.c,
                ws.n,
                ws.h,
                ws.w,
                g.run_len,
                &|co, ci| &w[(co * xs.c + ci) * k_taps..(co * xs.c + ci + 1) * k_taps],
                &|co| b[co],
                &mut acc,
            );
            // unpad: keep the first `ow` cells of each output row
            for co in 0..ws.n {
                let plane = &acc[co * g.run_len..(co + 1) * g.run_len];
                for oh in 0..out_shape.h {
                    let dst = out_shape.index(n, co, oh, 0);
                    out[dst..dst + out_shape.w]
                        .copy_from_slice(&plane[oh * g.w2..oh * g.w2 + out_shape.w]);
                }
            }
        }
    } else {
        // generic strided path; same per-element accumulation order
        for n in 0..xs.n {
            for co in 0..ws.n {
                for oh in 0..out_shape.h {
                    for ow in 0..out_shape.w {
                        let mut acc = b[co];
                        for ci in 0..xs.c {
                            for kh in 0..ws.h {
                                let ih = (oh * stride + kh) as isize - pad as isize;
                                if ih < 0 || ih >= xs.h as isize {
                                    continue;
                                }
                                for kw in 0..ws.w {
                                    let iw = (ow * stride + kw) as isize - pad as isize;
                                    if iw < 0 || iw >= xs.w as isize {
                                        continue;
                                    }
                                    let xv = x[xs.index(n, ci, ih as usize, iw as usize)];
                                    let wv = w[ws.index(co, ci, kh, kw)];
                                    acc = acc.add(wv.mul(xv));
                                }
                            }
                        }
                        out[out_shape.index(n, co, oh, ow)] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Eight-lane strided dot product. Deterministic fixed order.
fn dot_lanes<E: Scalar>(a: &[E], b: &[E]) -> E {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [E::ZERO; 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (ca, cb) in (&mut ac).zip(&mut bc) {
        for l in 0..8 {
            acc[l] = acc[l].add(ca[l].mul(cb[l]));
        }
    }
    let mut s = E::ZERO;
    for slot in acc {
        s = s.add(slot);
    }
    for (x, y) in ac.remainder().iter().zip(bc.remainder()) {
        s = s.add(x.mul(*y));
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    dout: &[E],
    out_shape: Shape,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> Vec<Option<Vec<E>>> {
    let xs = x.shape();
    let ws = w.shape();
    let (need_x, need_w, need_b) = need;

    let db = if need_b {
        let mut db = vec![E::ZERO; ws.n];
        for n in 0..out_shape.n {
            for (co, slot) in db.iter_mut().enumerate() {
                let base = out_shape.index(n, co, 0, 0);
                for v in &dout[base..base + out_shape.h * out_shape.w] {
                    *slot = slot.add(*v);
                }
            }
        }
        Some(db)
    } else {
        None
    };

    let fast = stride == 1 && pad < ws.h && pad < ws.w;

    let dx = if need_x {
        let mut dx = vec![E::ZERO; xs.count()];
        if fast {
            // full correlation of dout with the flipped kernel
            let xd = x.data();
            let _ = &*xd; // x itself is not needed for dx; keep borrow scoped out
            drop(xd);
            let wd = w.data();
            let k_taps = ws.h * ws.w;
            let mut wf = vec![E::ZERO; ws.count()];
            for co in 0..ws.n {
                for ci in 0..ws.c {
                    for kh in 0..ws.h {
                        for kw in 0..ws.w {
                            wf[(ci * ws.n + co) * k_taps + kh * ws.w + kw] =
                                wd[ws.index(co, ci, ws.h - 1 - kh, ws.w - 1 - kw)];
                        }
                    }
                }
            }
            let pad_h = ws.h - 1 - pad;
            let pad_w = ws.w - 1 - pad;
            let w2 = out_shape.w + 2 * pad_w;
            let hp = out_shape.h + 2 * pad_h;
            let plane_in = hp * w2;
            let run_len = (xs.h - 1) * w2 + xs.w;
            let mut src_p = vec![E::ZERO; out_shape.c * plane_in];
            let mut acc: Vec<E> = Vec::new();
            for n in 0..xs.n {
                for v in src_p.iter_mut() {
                    *v = E::ZERO;
                }
                for co in 0..out_shape.c {
                    let base = out_shape.index(n, co, 0, 0);
                    for row in 0..out_shape.h {
                        let d = co * plane_in + (row + pad_h) * w2 + pad_w;
                        src_p[d..d + out_shape.w].copy_from_slice(
                            &dout[base + row * out_shape.w..base + (row + 1) * out_shape.w],
                        );
                    }
                }
                conv_stride1_core(
                    &src_p,
                    plane_in,
                    w2,
                    out_shape.c,
                    xs.c,
                    ws.h,
                    ws.w,
                    run_len,
                    &|ci, co| &wf[(ci * ws.n + co) * k_taps..(ci * ws.n + co + 1) * k_taps],
                    &|_| E::ZERO,
                    &mut acc,
                );
                for ci in 0..xs.c {
                    let plane = &acc[ci * run_len..(ci + 1) * run_len];
                    for ih in 0..xs.h {
                        let dst = xs.index(n, ci, ih, 0);
                        dx[dst..dst + xs.w].copy_from_slice(&plane[ih * w2..ih * w2 + xs.w]);
                    }
                }
            }
        } else {
            let wd = w.data();
            for n in 0..out_shape.n {
                for co in 0..out_shape.c {
                    for oh in 0..out_shape.h {
                        for ow in 0..out_shape.w {
                            let g = dout[out_shape.index(n, co, oh, ow)];
                            for ci in 0..xs.c {
                                for kh in 0..ws.h {
                                    let ih = (oh * stride + kh) as isize - pad as isize;
                                    if ih < 0 || ih >= xs.h as isize {
                                        continue;
                                    }
                                    for kw in 0..ws.w {
                                        let iw = (ow * stride + kw) as isize - pad as isize;
                                        if iw < 0 || iw >= xs.w as isize {
                                            continue;
                                        }
                                        let idx = xs.index(n, ci, ih as usize, iw as usize);
                                        dx[idx] =
                                            dx[idx].add(g.mul(wd[ws.index(co, ci, kh, kw)]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    } else {
        None
    };

    let dw = if need_w {
        let xd = x.data();
        let mut dw = vec![E::ZERO; ws.count()];
        if fast {
            let g = conv_geom(xs.h, xs.w, ws.h, ws.w, pad);
            let mut x_p = vec![E::ZERO; xs.c * g.plane_in];
            let mut dout_z = vec![E::ZERO; g.run_len];
            for n in 0..xs.n {
                if pad == 0 {
                    x_p.copy_from_slice(
                        &xd[n * xs.c * xs.h * xs.w..(n + 1) * xs.c * xs.h * xs.w],
                    );
                } else {
                    for v in x_p.iter_mut() {
                        *v = E::ZERO;
                    }
                    for ci in 0..xs.c {
                        pad_plane(
                            &xd[xs.index(n, ci, 0, 0)..xs.index(n, ci, 0, 0) + xs.h * xs.w],
                            xs.h,
                            xs.w,
                            pad,
                            &mut x_p[ci * g.plane_in..(ci + 1) * g.plane_in],
                        );
                    }
                }
                for co in 0..ws.n {
                    for v in dout_z.iter_mut() {
                        *v = E::ZERO;
                    }
                    let base = out_shape.index(n, co, 0, 0);
                    for oh in 0..out_shape.h {
                        dout_z[oh * g.w2..oh * g.w2 + out_shape.w].copy_from_slice(
                            &dout[base + oh * out_shape.w..base + (oh + 1) * out_shape.w],
                        );
                    }
                    for ci in 0..xs.c {
                        for kh in 0..ws.h {
                            for kw in 0..ws.w {
                                let off = ci * g.plane_in + kh * g.w2 + kw;
                                let v = dot_lanes(&dout_z, &x_p[off..off + g.run_len]);
                                let idx = ws.index(co, ci, kh, kw);
                                dw[idx] = dw[idx].add(v);
                            }
                        }
                    }
                }
            }
        } else {
            for n in 0..out_shape.n {
                for co in 0..out_shape.c {
                    for oh in 0..out_shape.h {
                        for ow in 0..out_shape.w {
                            let g = dout[out_shape.index(n, co, oh, ow)];
                            for ci in 0..xs.c {
                                for kh in 0..ws.h {
                                    let ih = (oh * stride + kh) as isize - pad as isize;
                                    if ih < 0 || ih >= xs.h as isize {
                                        continue;
                                    }
                                    for kw in 0..ws.w {
                                        let iw = (ow * stride + kw) as isize - pad as isize;
                                        if iw < 0 || iw >= xs.w as isize {
                                            continue;
                                        }
                                        let idx = ws.index(co, ci, kh, kw);
                                        dw[idx] = dw[idx].add(
                                            g.mul(xd[xs.index(n, ci, ih as usize, iw as usize)]),
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(dw)
    } else {
        None
    };

    vec![dx, dw, db.map(|d| d)]
}

/// 2-D convolution (cross-correlation) with zero padding.
///
/// `w` is laid out as (out_channels, in_channels, kh, kw); `b` holds one bias
/// per output channel. Differentiable w.r.t. `x`, `w`, and `b`.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (out_shape, ws) = check_conv_args(x, w, b, stride, pad)?;
    let xs = x.shape();
    let out = conv2d_forward(
        &x.data(),
        xs,
        &w.data(),
        ws,
        &b.data(),
        stride,
        pad,
        out_shape,
    );
    add_macs((out_shape.count() * ws.c * ws.h * ws.w) as u64);

    let xc = x.clone();
    let wc = w.clone();
    let need = (x.tracked(), w.tracked(), b.tracked());
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |dout| conv2d_backward(&xc, &wc, dout, out_shape, stride, pad, need)),
    ))
}

/// 1x1 convolution: a per-pixel channel mix.
pub fn conv1x1<E: Scalar>(x: &Tensor<E>, w: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let ws = w.shape();
    if ws.h != 1 || ws.w != 1 {
        return Err(CtunError::arg(
            "conv1x1",
            format!("kernel must be 1x1, got {}x{}", ws.h, ws.w),
        ));
    }
    conv2d(x, w, b, 1, 0)
}

// ---------------------------------------------------------------------------
// layer normalization
// ---------------------------------------------------------------------------

/// Layer normalization over (C,H,W) per sample, then a per-channel affine.
pub fn layer_norm<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>> {
    if eps <= 0.0 {
        return Err(CtunError::arg("layer_norm", "eps must be > 0"));
    }
    let xs = x.shape();
    if gamma.shape().count() != xs.c || beta.shape().count() != xs.c {
        return Err(CtunError::shape(
            "layer_norm",
            format!(
                "gamma/beta must have {} elements, got {}/{}",
                xs.c,
                gamma.shape().count(),
                beta.shape().count()
            ),
        ));
    }
    let k = xs.c * xs.h * xs.w;
    let area = xs.h * xs.w;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let eps_e = E::from_f64(eps);
    let inv_k = E::from_f64(1.0 / k as f64);

    let mut out = vec![E::ZERO; xs.count()];
    let mut stats = Vec::with_capacity(xs.n); // (mean, inv_std) per sample
    for n in 0..xs.n {
        let s = &xd[n * k..(n + 1) * k];
        let mut sum = E::ZERO;
        for v in s {
            sum = sum.add(*v);
        }
        let mu = sum.mul(inv_k);
        let mut var = E::ZERO;
        for v in s {
            let d = v.sub(mu);
            var = var.add(d.mul(d));
        }
        var = var.mul(inv_k);
        let inv = E::ONE.div(var.add(eps_e).sqrt());
        stats.push((mu, inv));
        for c in 0..xs.c {
            let (g, b) = (gd[c], bd[c]);
            for i in 0..area {
                let idx = n * k + c * area + i;
                out[idx] = g.mul(s[c * area + i].sub(mu).mul(inv)).add(b);
            }
        }
    }

    let xc = x.clone();
    let gc = gamma.clone();
    let need = (x.tracked(), gamma.tracked(), beta.tracked());
    let gshape = gamma.shape();
    let bshape = beta.shape();
    Ok(Tensor::from_op(
        out,
        xs,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |dout| {
            let xd = xc.data();
            let gd = gc.data();
            let (need_x, need_g, need_b) = need;
            let mut dx = if need_x {
                Some(vec![E::ZERO; xs.count()])
            } else {
                None
            };
            let mut dg = if need_g {
                Some(vec![E::ZERO; gshape.count()])
            } else {
                None
            };
            let mut db = if need_b {
                Some(vec![E::ZERO; bshape.count()])
            } else {
                None
            };
            for n in 0..xs.n {
                let s = &xd[n * k..(n + 1) * k];
                let g_out = &dout[n * k..(n + 1) * k];
                let (mu, inv) = stats[n];
                // xhat and dxhat for this sample
                if need_g || need_b {
                    for c in 0..xs.c {
                        let (mut sg, mut sb) = (E::ZERO, E::ZERO);
                        for i in 0..area {
                            let xhat = s[c * area + i].sub(mu).mul(inv);
                            let go = g_out[c * area + i];
                            sg = sg.add(go.mul(xhat));
                            sb = sb.add(go);
                        }
                        if let Some(dg) = dg.as_mut() {
                            dg[c] = dg[c].add(sg);
                        }
                        if let Some(db) = db.as_mut() {
                            db[c] = db[c].add(sb);
                        }
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    // dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                    let mut m1 = E::ZERO;
                    let mut m2 = E::ZERO;
                    for c in 0..xs.c {
                        let g = gd[c];
                        for i in 0..area {
                            let dxhat = g_out[c * area + i].mul(g);
                            let xhat = s[c * area + i].sub(mu).mul(inv);
                            m1 = m1.add(dxhat);
                            m2 = m2.add(dxhat.mul(xhat));
                        }
                    }
                    m1 = m1.mul(inv_k);
                    m2 = m2.mul(inv_k);
                    for c in 0..xs.c {
                        let g = gd[c];
                        for i in 0..area {
                            let idx = n * k + c * area + i;
                            let dxhat = g_out[c * area + i].mul(g);
                            let xhat = s[c * area + i].sub(mu).mul(inv);
                            dx[idx] = inv.mul(dxhat.sub(m1).sub(xhat.mul(m2)));
                        }
                    }
                }
            }
            vec![dx, dg, db]
        }),
    ))
}

// ---------------------------------------------------------------------------
// pixel shuffle / unshuffle
// ---------------------------------------------------------------------------

fn shuffle_map<E: Scalar>(x: &[E], xs: Shape, r: usize, forward: bool) -> (Vec<E>, Shape) {
    let (out_shape, c_out) = if forward {
        let c_out = xs.c / (r * r);
        (Shape::new(xs.n, c_out, xs.h * r, xs.w * r), c_out)
    } else {
        (Shape::new(xs.n, xs.c * r * r, xs.h / r, xs.w / r), xs.c)
    };
    let mut out = vec![E::ZERO; out_shape.count()];
    if forward {
        for n in 0..xs.n {
            for c in 0..c_out {
                for dy in 0..r {
                    for dx in 0..r {
                        let src_c = c * r * r + dy * r + dx;
                        for h in 0..xs.h {
                            for w in 0..xs.w {
                                out[out_shape.index(n, c, r * h + dy, r * w + dx)] =
                                    x[xs.index(n, src_c, h, w)];
                            }
                        }
                    }
                }
            }
        }
    } else {
        for n in 0..xs.n {
            for c in 0..out_shape.c {
                let (base_c, rem) = (c / (r * r), c % (r * r));
                let (dy, dx) = (rem / r, rem % r);
                for h in 0..out_shape.h {
                    for w in 0..out_shape.w {
                        out[out_shape.index(n, c, h, w)] =
                            x[xs.index(n, base_c, r * h + dy, r * w + dx)];
                    }
                }
            }
        }
    }
    (out, out_shape)
}

/// Channel-to-space rearrangement: (N, C*r^2, H, W) -> (N, C, rH, rW).
pub fn pixel_shuffle<E: Scalar>(x: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
    let xs = x.shape();
    if r == 0 || xs.c % (r * r) != 0 {
        return Err(CtunError::arg(
            "pixel_shuffle",
            format!("channel count {} not divisible by {}^2", xs.c, r),
        ));
    }
    let (out, out_shape) = shuffle_map(&x.data(), xs, r, true);
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let (dx, _) = shuffle_map(dout, out_shape, r, false);
            vec![Some(dx)]
        }),
    ))
}

/// Space-to-channel rearrangement: (N, C, rH, rW) -> (N, C*r^2, H, W).
pub fn pixel_unshuffle<E: Scalar>(x: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
    let xs = x.shape();
    if r == 0 || xs.h % r != 0 || xs.w % r != 0 {
        return Err(CtunError::arg(
            "pixel_unshuffle",
            format!("spatial dims {}x{} not divisible by {r}", xs.h, xs.w),
        ));
    }
    let (out, out_shape) = shuffle_map(&x.data(), xs, r, false);
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let (dx, _) = shuffle_map(dout, out_shape, r, true);
            vec![Some(dx)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------------

/// Source taps for one output axis under half-pixel-center sampling with
/// edge clamping: (i0, i1, frac).
fn bilinear_axis(out_n: usize, in_n: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    (0..out_n)
        .map(|o| {
            let u = ((o as f64 + 0.5) / scale - 0.5).clamp(0.0, (in_n - 1) as f64);
            let i0 = u.floor() as usize;
            let frac = u - i0 as f64;
            let i1 = (i0 + 1).min(in_n - 1);
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers ((dst+0.5)/scale - 0.5) and
/// edge clamping. Differentiable w.r.t. `x`.
pub fn bilinear_resize<E: Scalar>(x: &Tensor<E>, scale: f64) -> Result<Tensor<E>> {
    if scale <= 0.0 {
        return Err(CtunError::arg("bilinear_resize", "scale must be > 0"));
    }
    let xs = x.shape();
    let oh = (xs.h as f64 * scale).round() as usize;
    let ow = (xs.w as f64 * scale).round() as usize;
    if oh == 0 || ow == 0 {
        return Err(CtunError::arg(
            "bilinear_resize",
            format!("output dims {}x{} collapse to zero", oh, ow),
        ));
    }
    let out_shape = Shape::new(xs.n, xs.c, oh, ow);
    let rows = bilinear_axis(oh, xs.h, scale);
    let cols = bilinear_axis(ow, xs.w, scale);

    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            for (o_r, &(r0, r1, fy)) in rows.iter().enumerate() {
                for (o_c, &(c0, c1, fx)) in cols.iter().enumerate() {
                    let p00 = xd[xs.index(n, c, r0, c0)];
                    let p01 = xd[xs.index(n, c, r0, c1)];
                    let p10 = xd[xs.index(n, c, r1, c0)];
                    let p11 = xd[xs.index(n, c, r1, c1)];
                    let w00 = E::from_f64((1.0 - fy) * (1.0 - fx));
                    let w01 = E::from_f64((1.0 - fy) * fx);
                    let w10 = E::from_f64(fy * (1.0 - fx));
                    let w11 = E::from_f64(fy * fx);
                    out[out_shape.index(n, c, o_r, o_c)] = w00
                        .mul(p00)
                        .add(w01.mul(p01))
                        .add(w10.mul(p10))
                        .add(w11.mul(p11));
                }
            }
        }
    }
    drop(xd);

    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let mut dx = vec![E::ZERO; xs.count()];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    for (o_r, &(r0, r1, fy)) in rows.iter().enumerate() {
                        for (o_c, &(c0, c1, fx)) in cols.iter().enumerate() {
                            let g = dout[out_shape.index(n, c, o_r, o_c)];
                            let mut scatter = |r: usize, cc: usize, wv: f64| {
                                let idx = xs.index(n, c, r, cc);
                                dx[idx] = dx[idx].add(g.mul(E::from_f64(wv)));
                            };
                            scatter(r0, c0, (1.0 - fy) * (1.0 - fx));
                            scatter(r0, c1, (1.0 - fy) * fx);
                            scatter(r1, c0, fy * (1.0 - fx));
                            scatter(r1, c1, fy * fx);
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// channel concat / split
// ---------------------------------------------------------------------------

/// Channel-wise concatenation. Inputs must agree on N, H, W.
pub fn concat_channels<E: Scalar>(xs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if xs.is_empty() {
        return Err(CtunError::arg("concat_channels", "no inputs"));
    }
    let first = xs[0].shape();
    let mut c_total = 0;
    for x in xs {
        let s = x.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(CtunError::shape(
                "concat_channels",
                format!("input shape {} does not match {}", s, first),
            ));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(first.n, c_total, first.h, first.w);
    let area = first.h * first.w;
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..first.n {
        let mut c_off = 0;
        for x in xs {
            let s = x.shape();
            let xd = x.data();
            let src = &xd[s.index(n, 0, 0, 0)..s.index(n, 0, 0, 0) + s.c * area];
            let dst = out_shape.index(n, c_off, 0, 0);
            out[dst..dst + s.c * area].copy_from_slice(src);
            c_off += s.c;
        }
    }
    let sizes: Vec<usize> = xs.iter().map(|x| x.shape().c).collect();
    let tracked: Vec<bool> = xs.iter().map(|x| x.tracked()).collect();
    let parents: Vec<Tensor<E>> = xs.iter().map(|x| (*x).clone()).collect();
    Ok(Tensor::from_op(
        out,
        out_shape,
        parents,
        Box::new(move |dout| {
            let mut grads = Vec::with_capacity(sizes.len());
            let mut c_off = 0;
            for (&c, &t) in sizes.iter().zip(&tracked) {
                if !t {
                    c_off += c;
                    grads.push(None);
                    continue;
                }
                let mut g = vec![E::ZERO; out_shape.n * c * area];
                for n in 0..out_shape.n {
                    let src = out_shape.index(n, c_off, 0, 0);
                    g[n * c * area..(n + 1) * c * area]
                        .copy_from_slice(&dout[src..src + c * area]);
                }
                grads.push(Some(g));
                c_off += c;
            }
            grads
        }),
    ))
}

/// Split along channels into pieces of the given sizes. Inverse of
/// [`concat_channels`]; gradients route back to the matching slice.
pub fn split_channels<E: Scalar>(x: &Tensor<E>, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
    let xs = x.shape();
    let total: usize = sizes.iter().sum();
    if total != xs.c || sizes.iter().any(|&s| s == 0) {
        return Err(CtunError::shape(
            "split_channels",
            format!("sizes {:?} do not partition {} channels", sizes, xs.c),
        ));
    }
    let area = xs.h * xs.w;
    let xd = x.data();
    let mut outs = Vec::with_capacity(sizes.len());
    let mut c_off = 0;
    for &c in sizes {
        let piece_shape = Shape::new(xs.n, c, xs.h, xs.w);
        let mut piece = vec![E::ZERO; piece_shape.count()];
        for n in 0..xs.n {
            let src = xs.index(n, c_off, 0, 0);
            piece[n * c * area..(n + 1) * c * area].copy_from_slice(&xd[src..src + c * area]);
        }
        let this_off = c_off;
        outs.push(Tensor::from_op(
            piece,
            piece_shape,
            vec![x.clone()],
            Box::new(move |dout| {
                let mut dx = vec![E::ZERO; xs.count()];
                for n in 0..xs.n {
                    let dst = xs.index(n, this_off, 0, 0);
                    dx[dst..dst + c * area].copy_from_slice(&dout[n * c * area..(n + 1) * c * area]);
                }
                vec![Some(dx)]
            }),
        ));
        c_off += c;
    }
    drop(xd);
    Ok(outs)
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

fn unary<E: Scalar>(
    x: &Tensor<E>,
    f: impl Fn(E) -> E,
    df: impl Fn(E) -> E + 'static,
) -> Tensor<E> {
    let xs = x.shape();
    let out: Vec<E> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    Tensor::from_op(
        out,
        xs,
        vec![x.clone()],
        Box::new(move |dout| {
            let xd = xc.data();
            let dx = dout
                .iter()
                .zip(xd.iter())
                .map(|(&g, &v)| g.mul(df(v)))
                .collect();
            vec![Some(dx)]
        }),
    )
}

pub fn sigmoid<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let s = |v: E| E::ONE.div(E::ONE.add(v.neg().exp()));
    unary(x, s, move |v| {
        let sv = s(v);
        sv.mul(E::ONE.sub(sv))
    })
}

pub fn tanh_act<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    unary(x, |v| v.tanh(), |v| {
        let t = v.tanh();
        E::ONE.sub(t.mul(t))
    })
}

/// Leaky ReLU. The derivative at exactly zero is taken as 1.
pub fn leaky_relu<E: Scalar>(x: &Tensor<E>, slope: f64) -> Tensor<E> {
    let s = E::from_f64(slope);
    unary(
        x,
        move |v| if v >= E::ZERO { v } else { s.mul(v) },
        move |v| if v >= E::ZERO { E::ONE } else { s },
    )
}

pub fn relu<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    leaky_relu(x, 0.0)
}

/// |x|. The derivative at exactly zero is taken as 0.
pub fn abs_elem<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    unary(x, |v| v.abs(), |v| {
        if v > E::ZERO {
            E::ONE
        } else if v < E::ZERO {
            E::ONE.neg()
        } else {
            E::ZERO
        }
    })
}

pub fn sqrt_elem<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    unary(x, |v| v.sqrt(), |v| {
        E::from_f64(0.5).div(v.sqrt())
    })
}

pub fn scale<E: Scalar>(x: &Tensor<E>, s: f64) -> Tensor<E> {
    let se = E::from_f64(s);
    unary(x, move |v| se.mul(v), move |_| se)
}

pub fn add_scalar<E: Scalar>(x: &Tensor<E>, s: f64) -> Tensor<E> {
    let se = E::from_f64(s);
    unary(x, move |v| v.add(se), |_| E::ONE)
}

fn check_same_shape<E: Scalar>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<Shape> {
    if a.shape() != b.shape() {
        return Err(CtunError::shape(
            op,
            format!("{} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(a.shape())
}

/// Elementwise product. Shapes must match exactly (no broadcasting).
pub fn mul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = check_same_shape("mul", a, b)?;
    let out: Vec<E> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x.mul(y))
        .collect();
    let (ac, bc) = (a.clone(), b.clone());
    let need = (a.tracked(), b.tracked());
    Ok(Tensor::from_op(
        out,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |dout| {
            let da = need.0.then(|| {
                let bd = bc.data();
                dout.iter().zip(bd.iter()).map(|(&g, &v)| g.mul(v)).collect()
            });
            let db = need.1.then(|| {
                let ad = ac.data();
                dout.iter().zip(ad.iter()).map(|(&g, &v)| g.mul(v)).collect()
            });
            vec![da, db]
        }),
    ))
}

/// Elementwise sum. Shapes must match exactly.
pub fn add<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = check_same_shape("add", a, b)?;
    let out: Vec<E> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x.add(y))
        .collect();
    let need = (a.tracked(), b.tracked());
    Ok(Tensor::from_op(
        out,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |dout| {
            vec![
                need.0.then(|| dout.to_vec()),
                need.1.then(|| dout.to_vec()),
            ]
        }),
    ))
}

/// Elementwise difference a - b. Shapes must match exactly.
pub fn sub<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = check_same_shape("sub", a, b)?;
    let out: Vec<E> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x.sub(y))
        .collect();
    let need = (a.tracked(), b.tracked());
    Ok(Tensor::from_op(
        out,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |dout| {
            vec![
                need.0.then(|| dout.to_vec()),
                need.1.then(|| dout.iter().map(|&g| g.neg()).collect()),
            ]
        }),
    ))
}

// ---------------------------------------------------------------------------
// reductions and broadcast helpers
// ---------------------------------------------------------------------------

/// Sum of all elements, as a (1,1,1,1) tensor.
pub fn sum<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let mut s = E::ZERO;
    for v in x.data().iter() {
        s = s.add(*v);
    }
    let count = x.shape().count();
    Tensor::from_op(
        vec![s],
        Shape::new(1, 1, 1, 1),
        vec![x.clone()],
        Box::new(move |dout| vec![Some(vec![dout[0]; count])]),
    )
}

/// Mean of all elements, as a (1,1,1,1) tensor.
pub fn mean<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let count = x.shape().count();
    scale(&sum(x), 1.0 / count as f64)
}

/// Mean over channels: (N,C,H,W) -> (N,1,H,W).
pub fn channel_mean<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
    let area = xs.h * xs.w;
    let inv_c = E::from_f64(1.0 / xs.c as f64);
    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.index(n, c, 0, 0);
            for i in 0..area {
                let o = n * area + i;
                out[o] = out[o].add(xd[base + i]);
            }
        }
        for i in 0..area {
            let o = n * area + i;
            out[o] = out[o].mul(inv_c);
        }
    }
    drop(xd);
    Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let mut dx = vec![E::ZERO; xs.count()];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let base = xs.index(n, c, 0, 0);
                    for i in 0..area {
                        dx[base + i] = dout[n * area + i].mul(inv_c);
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Max over channels: (N,C,H,W) -> (N,1,H,W). Ties resolve to the lowest
/// channel index; the gradient routes to that element.
pub fn channel_max<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
    let area = xs.h * xs.w;
    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    let mut argmax = vec![0u32; out_shape.count()];
    for n in 0..xs.n {
        for i in 0..area {
            let mut best = xd[xs.index(n, 0, 0, 0) + i];
            let mut best_c = 0u32;
            for c in 1..xs.c {
                let v = xd[xs.index(n, c, 0, 0) + i];
                if v > best {
                    best = v;
                    best_c = c as u32;
                }
            }
            out[n * area + i] = best;
            argmax[n * area + i] = best_c;
        }
    }
    drop(xd);
    Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let mut dx = vec![E::ZERO; xs.count()];
            for n in 0..xs.n {
                for i in 0..area {
                    let c = argmax[n * area + i] as usize;
                    dx[xs.index(n, c, 0, 0) + i] = dout[n * area + i];
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Explicit channel broadcast: (N,1,H,W) -> (N,C,H,W).
pub fn tile_channels<E: Scalar>(x: &Tensor<E>, c_out: usize) -> Result<Tensor<E>> {
    let xs = x.shape();
    if xs.c != 1 {
        return Err(CtunError::shape(
            "tile_channels",
            format!("expected a single-channel input, got {} channels", xs.c),
        ));
    }
    let out_shape = Shape::new(xs.n, c_out, xs.h, xs.w);
    let area = xs.h * xs.w;
    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..xs.n {
        for c in 0..c_out {
            let dst = out_shape.index(n, c, 0, 0);
            out[dst..dst + area].copy_from_slice(&xd[n * area..(n + 1) * area]);
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let mut dx = vec![E::ZERO; xs.count()];
            for n in 0..xs.n {
                for c in 0..c_out {
                    let src = out_shape.index(n, c, 0, 0);
                    for i in 0..area {
                        dx[n * area + i] = dx[n * area + i].add(dout[src + i]);
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Global average pool: (N,C,H,W) -> (N,C,1,1).
pub fn spatial_mean<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, xs.c, 1, 1);
    let area = xs.h * xs.w;
    let inv = E::from_f64(1.0 / area as f64);
    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.index(n, c, 0, 0);
            let mut s = E::ZERO;
            for v in &xd[base..base + area] {
                s = s.add(*v);
            }
            out[n * xs.c + c] = s.mul(inv);
        }
    }
    drop(xd);
    Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let mut dx = vec![E::ZERO; xs.count()];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let g = dout[n * xs.c + c].mul(inv);
                    let base = xs.index(n, c, 0, 0);
                    for v in dx[base..base + area].iter_mut() {
                        *v = g;
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Explicit spatial broadcast: (N,C,1,1) -> (N,C,H,W).
pub fn tile_spatial<E: Scalar>(x: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
    let xs = x.shape();
    if xs.h != 1 || xs.w != 1 {
        return Err(CtunError::shape(
            "tile_spatial",
            format!("expected (N,C,1,1) input, got {}", xs),
        ));
    }
    let out_shape = Shape::new(xs.n, xs.c, h, w);
    let area = h * w;
    let xd = x.data();
    let mut out = vec![E::ZERO; out_shape.count()];
    for (nc, &v) in xd.iter().enumerate() {
        for slot in out[nc * area..(nc + 1) * area].iter_mut() {
            *slot = v;
        }
    }
    drop(xd);
    Ok(Tensor::from_op(
        out,
        out_shape,
        vec![x.clone()],
        Box::new(move |dout| {
            let mut dx = vec![E::ZERO; xs.count()];
            for (nc, slot) in dx.iter_mut().enumerate() {
                let mut s = E::ZERO;
                for g in &dout[nc * area..(nc + 1) * area] {
                    s = s.add(*g);
                }
                *slot = s;
            }
            vec![Some(dx)]
        }),
    ))
}
