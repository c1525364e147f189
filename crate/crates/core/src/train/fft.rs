//! Radix-2 FFT over the two spatial axes, differentiable through the linear
//! transform.

use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Tensor};

fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place iterative radix-2 transform. `sign` is -1 for the forward DFT and
/// +1 for the unnormalized inverse.
fn fft1d(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n < 2 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut mask = n >> 1;
        while j & mask != 0 {
            j ^= mask;
            mask >>= 1;
        }
        j |= mask;
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let half = len / 2;
        for start in (0..n).step_by(len) {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..half {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
        len <<= 1;
    }
}

/// 2-D transform of each (n,c) plane, rows then columns, in f64 scratch.
fn dft2(re: &mut [f64], im: &mut [f64], planes: usize, h: usize, w: usize, sign: f64) {
    let area = h * w;
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for p in 0..planes {
        let (pr, pi) = (&mut re[p * area..(p + 1) * area], &mut im[p * area..(p + 1) * area]);
        for row in 0..h {
            fft1d(&mut pr[row * w..(row + 1) * w], &mut pi[row * w..(row + 1) * w], sign);
        }
        for col in 0..w {
            for row in 0..h {
                col_re[row] = pr[row * w + col];
                col_im[row] = pi[row * w + col];
            }
            fft1d(&mut col_re, &mut col_im, sign);
            for row in 0..h {
                pr[row * w + col] = col_re[row];
                pi[row * w + col] = col_im[row];
            }
        }
    }
}

/// 2-D DFT of every (n,c) plane. Returns the real and imaginary parts as two
/// tensors of the input shape. Spatial dims must be powers of two.
///
/// Both outputs are differentiable: the gradient flows back through the
/// conjugate-transposed (unnormalized inverse) transform.
pub fn fft2d<E: Scalar>(x: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
    let xs = x.shape();
    if !is_power_of_two(xs.h) || !is_power_of_two(xs.w) {
        return Err(CtunError::arg(
            "fft2d",
            format!("spatial dims {}x{} must be powers of two", xs.h, xs.w),
        ));
    }
    let planes = xs.n * xs.c;
    let mut re: Vec<f64> = x.data().iter().map(|v| v.to_f64()).collect();
    let mut im = vec![0.0f64; xs.count()];
    dft2(&mut re, &mut im, planes, xs.h, xs.w, -1.0);

    let re_out: Vec<E> = re.iter().map(|&v| E::from_f64(v)).collect();
    let im_out: Vec<E> = im.iter().map(|&v| E::from_f64(v)).collect();

    // d loss / dx = Re(F^H g); for the imaginary output the incoming gradient
    // enters as i*g.
    let adjoint = move |g: &[E], imaginary: bool| -> Vec<E> {
        let mut gr;
        let mut gi;
        if imaginary {
            gr = vec![0.0f64; g.len()];
            gi = g.iter().map(|v| v.to_f64()).collect::<Vec<_>>();
        } else {
            gr = g.iter().map(|v| v.to_f64()).collect::<Vec<_>>();
            gi = vec![0.0f64; g.len()];
        }
        dft2(&mut gr, &mut gi, planes, xs.h, xs.w, 1.0);
        gr.iter().map(|&v| E::from_f64(v)).collect()
    };

    let adj_re = adjoint.clone();
    let re_t = Tensor::from_op(
        re_out,
        xs,
        vec![x.clone()],
        Box::new(move |g| vec![Some(adj_re(g, false))]),
    );
    let im_t = Tensor::from_op(
        im_out,
        xs,
        vec![x.clone()],
        Box::new(move |g| vec![Some(adjoint(g, true))]),
    );
    Ok((re_t, im_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive O(N^2) 2-D DFT, the defining sum.
    fn dft_oracle(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut sr = 0.0;
                let mut si = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (ky as f64 * y as f64 / h as f64
                                + kx as f64 * xx as f64 / w as f64);
                        sr += x[y * w + xx] * ang.cos();
                        si += x[y * w + xx] * ang.sin();
                    }
                }
                re[ky * w + kx] = sr;
                im[ky * w + kx] = si;
            }
        }
        (re, im)
    }

    #[test]
    fn constant_input_concentrates_in_dc() {
        let c = 0.37f64;
        let x = Tensor::from_vec(vec![c; 8 * 4], Shape::new(1, 1, 8, 4));
        let (re, im) = fft2d(&x).unwrap();
        let rv = re.to_vec();
        let iv = im.to_vec();
        assert!((rv[0] - c * 32.0).abs() < 1e-9);
        for (i, (r, vi)) in rv.iter().zip(&iv).enumerate() {
            if i > 0 {
                assert!(r.abs() < 1e-9 && vi.abs() < 1e-9, "bin {i}");
            }
        }
    }

    #[test]
    fn impulse_at_origin_has_flat_spectrum() {
        let mut data = vec![0.0f64; 8 * 8];
        data[0] = 1.0;
        let x = Tensor::from_vec(data, Shape::new(1, 1, 8, 8));
        let (re, im) = fft2d(&x).unwrap();
        for (r, i) in re.to_vec().iter().zip(im.to_vec()) {
            assert!((r - 1.0).abs() < 1e-12 && i.abs() < 1e-12);
        }
    }

    #[test]
    fn random_8x8_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data.clone(), Shape::new(1, 1, 8, 8));
        let (re, im) = fft2d(&x).unwrap();
        let (wr, wi) = dft_oracle(&data, 8, 8);
        for (a, b) in re.to_vec().iter().zip(&wr) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in im.to_vec().iter().zip(&wi) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_holds_up_to_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(8usize, 8usize), (16, 32), (64, 64)] {
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(data.clone(), Shape::new(1, 1, h, w));
            let (re, im) = fft2d(&x).unwrap();
            let spatial: f64 = data.iter().map(|v| v * v).sum();
            let spectral: f64 = re
                .to_vec()
                .iter()
                .zip(im.to_vec())
                .map(|(r, i)| r * r + i * i)
                .sum::<f64>()
                / (h * w) as f64;
            let rel = (spatial - spectral).abs() / spatial.abs();
            assert!(rel < 1e-6, "{h}x{w}: rel {rel}");
        }
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 6, 8));
        assert!(fft2d(&x).is_err());
    }
}
