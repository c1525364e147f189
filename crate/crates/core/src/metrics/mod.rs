//! Quality metrics (PSNR, SSIM on the luma channel), temporal-profile
//! extraction, and efficiency accounting.

mod flops;
mod profile;

pub use flops::{conv_flops, count_flops, FlopsBreakdown};
pub use profile::{profile_inference, ProfileReport};

use crate::data::FrameSequence;
use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Peak signal-to-noise ratio in dB. Inputs are expected in 0-255 units.
/// Identical inputs return the 99.0 dB cap.
pub fn psnr<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CtunError::shape(
            "psnr",
            format!("{} vs {}", a.shape(), b.shape()),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut se = 0.0f64;
    for (x, y) in ad.iter().zip(bd.iter()) {
        let d = x.to_f64() - y.to_f64();
        se += d * d;
    }
    let mse = se / ad.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(99.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn ssim_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let mut total = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let dy = i as isize - r;
            let dx = j as isize - r;
            let v = (-((dy * dy + dx * dx) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[i][j] = v;
            total += v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Single-scale SSIM over an 11x11 Gaussian window (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, L = 255), averaged over valid (unpadded) window positions.
/// Inputs are single-channel images in 0-255 units.
pub fn ssim<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(CtunError::shape(
            "ssim",
            format!("{} vs {}", s, b.shape()),
        ));
    }
    if s.c != 1 || s.n != 1 {
        return Err(CtunError::shape(
            "ssim",
            format!("expected a single (1,1,H,W) image, got {s}"),
        ));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(CtunError::arg(
            "ssim",
            format!("image {}x{} is smaller than the {SSIM_WINDOW}-pixel window", s.h, s.w),
        ));
    }
    let window = ssim_window();
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let ad = a.data();
    let bd = b.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(s.h - SSIM_WINDOW) {
        for left in 0..=(s.w - SSIM_WINDOW) {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, wrow) in window.iter().enumerate() {
                let row = (top + i) * s.w + left;
                for (j, &wv) in wrow.iter().enumerate() {
                    let x = ad[row + j].to_f64();
                    let y = bd[row + j].to_f64();
                    mx += wv * x;
                    my += wv * y;
                    mxx += wv * x * x;
                    myy += wv * y * y;
                    mxy += wv * x * y;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            let val = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Stack row `row` of every frame into a (1,3,N,W) image, one profile row per
/// timestep. Visualizes temporal consistency when written as a PNG.
pub fn temporal_profile<E: Scalar>(seq: &FrameSequence<E>, row: usize) -> Result<Tensor<E>> {
    if seq.is_empty() {
        return Err(CtunError::arg("temporal_profile", "empty sequence"));
    }
    let (h, w) = seq.frame_size();
    if row >= h {
        return Err(CtunError::arg(
            "temporal_profile",
            format!("row {row} out of range for height {h}"),
        ));
    }
    let n = seq.len();
    let out_shape = Shape::new(1, 3, n, w);
    let mut out = vec![E::ZERO; out_shape.count()];
    for (t, frame) in seq.frames.iter().enumerate() {
        let fs = frame.shape();
        let fd = frame.data();
        for c in 0..3 {
            let src = fs.index(0, c, row, 0);
            let dst = out_shape.index(0, c, t, 0);
            out[dst..dst + w].copy_from_slice(&fd[src..src + w]);
        }
    }
    Ok(Tensor::from_vec(out, out_shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar-loop PSNR.
    fn psnr_oracle(a: &[f64], b: &[f64], peak: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..a.len() {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let mse = acc / a.len() as f64;
        if mse == 0.0 {
            99.0
        } else {
            10.0 * (peak * peak / mse).log10()
        }
    }

    /// Independent scalar-loop SSIM: per-window means first, then central
    /// moments in a second pass.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let win = ssim_window();
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for top in 0..=(h - 11) {
            for left in 0..=(w - 11) {
                let mut mx = 0.0;
                let mut my = 0.0;
                for i in 0..11 {
                    for j in 0..11 {
                        mx += win[i][j] * a[(top + i) * w + left + j];
                        my += win[i][j] * b[(top + i) * w + left + j];
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let dx = a[(top + i) * w + left + j] - mx;
                        let dy = b[(top + i) * w + left + j] - my;
                        vx += win[i][j] * dx * dx;
                        vy += win[i][j] * dy * dy;
                        cov += win[i][j] * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|_| rng.gen_range(0u32..=255) as f64).collect()
    }

    #[test]
    fn psnr_identical_inputs_hit_the_cap() {
        let a = Tensor::from_vec(vec![7.0f64; 16], Shape::new(1, 1, 4, 4));
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), 99.0);
    }

    #[test]
    fn psnr_unit_offset_is_48_13_db() {
        let a = Tensor::from_vec(vec![100.0f64; 64], Shape::new(1, 1, 8, 8));
        let b = Tensor::from_vec(vec![101.0f64; 64], Shape::new(1, 1, 8, 8));
        let v = psnr(&a, &b, 255.0).unwrap();
        assert!((v - 48.1308).abs() < 1e-3, "{v}");
    }

    #[test]
    fn psnr_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = random_image(&mut rng, 8, 8);
            let b = random_image(&mut rng, 8, 8);
            let want = psnr_oracle(&a, &b, 255.0);
            let got = psnr(
                &Tensor::from_vec(a, Shape::new(1, 1, 8, 8)),
                &Tensor::from_vec(b, Shape::new(1, 1, 8, 8)),
                255.0,
            )
            .unwrap();
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::from_vec(random_image(&mut rng, 8, 8), Shape::new(1, 1, 8, 8));
        let b = Tensor::from_vec(random_image(&mut rng, 8, 8), Shape::new(1, 1, 8, 8));
        assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
        let c = Tensor::<f64>::zeros(Shape::new(1, 1, 8, 9));
        assert!(psnr(&a, &c, 255.0).is_err());
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::from_vec(random_image(&mut rng, 16, 16), Shape::new(1, 1, 16, 16));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_anticorrelated_high_variance_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // high-variance: alternate dark/bright blocks with noise
        let h = 32;
        let w = 32;
        let a: Vec<f64> = (0..h * w)
            .map(|i| {
                let block = ((i / w / 4) + (i % w / 4)) % 2;
                (block as f64) * 200.0 + rng.gen_range(0.0..55.0)
            })
            .collect();
        let b: Vec<f64> = a.iter().map(|v| 255.0 - v).collect();
        let got = ssim(
            &Tensor::from_vec(a.clone(), Shape::new(1, 1, h, w)),
            &Tensor::from_vec(b.clone(), Shape::new(1, 1, h, w)),
        )
        .unwrap();
        assert!(got < 0.1, "anticorrelated ssim {got}");
        let want = ssim_oracle(&a, &b, h, w);
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn ssim_matches_scalar_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = random_image(&mut rng, 14, 18);
            let b = random_image(&mut rng, 14, 18);
            let got = ssim(
                &Tensor::from_vec(a.clone(), Shape::new(1, 1, 14, 18)),
                &Tensor::from_vec(b.clone(), Shape::new(1, 1, 14, 18)),
            )
            .unwrap();
            let want = ssim_oracle(&a, &b, 14, 18);
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_rejects_images_smaller_than_the_window() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 10, 16));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn temporal_profile_stacks_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<Tensor<f32>> = (0..4)
            .map(|_| {
                Tensor::from_vec(
                    (0..3 * 5 * 6).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
                    Shape::new(1, 3, 5, 6),
                )
            })
            .collect();
        let seq = FrameSequence::new(frames.clone(), "t").unwrap();
        let prof = temporal_profile(&seq, 2).unwrap();
        assert_eq!(prof.shape(), Shape::new(1, 3, 4, 6));
        let pd = prof.to_vec();
        for (t, frame) in frames.iter().enumerate() {
            let fs = frame.shape();
            let fd = frame.to_vec();
            for c in 0..3 {
                for w in 0..6 {
                    assert_eq!(
                        pd[prof.shape().index(0, c, t, w)],
                        fd[fs.index(0, c, 2, w)]
                    );
                }
            }
        }
    }

    #[test]
    fn temporal_profile_static_sequence_has_identical_rows() {
        let frame = Tensor::from_vec(
            (0..3 * 4 * 5).map(|i| i as f32 * 0.01).collect(),
            Shape::new(1, 3, 4, 5),
        );
        let seq = FrameSequence::new(vec![frame.clone(), frame.clone(), frame], "s").unwrap();
        let prof = temporal_profile(&seq, 1).unwrap();
        let pd = prof.to_vec();
        let s = prof.shape();
        for c in 0..3 {
            for t in 1..3 {
                for w in 0..5 {
                    assert_eq!(pd[s.index(0, c, t, w)], pd[s.index(0, c, 0, w)]);
                }
            }
        }
    }

    #[test]
    fn temporal_profile_single_frame_and_row_bounds() {
        let frame = Tensor::from_vec(vec![0.5f32; 3 * 4 * 5], Shape::new(1, 3, 4, 5));
        let seq = FrameSequence::new(vec![frame], "one").unwrap();
        let prof = temporal_profile(&seq, 3).unwrap();
        assert_eq!(prof.shape(), Shape::new(1, 3, 1, 5));
        assert!(temporal_profile(&seq, 4).is_err());
    }
}
