//! Finite-difference gradient verification.
//!
//! [`grad_check`] compares reverse-mode gradients against central differences
//! (f(p+eps) - f(p-eps)) / (2 eps) at float64, coordinate by coordinate. It is
//! the independent oracle for every differentiable operation in the crate and
//! also backs the `ctun gradcheck` command.

use crate::error::{CtunError, Result};
use crate::tensor::{backward, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How many coordinates of each parameter to probe. `All` is exact but slow;
/// `Sample(k)` probes a seeded random subset of up to `k` coordinates.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    Sample(usize),
}

/// Compare analytic gradients of `f` w.r.t. `params` against central
/// differences. Returns the worst relative error over all probed coordinates.
///
/// The step for coordinate `p` is `eps * max(1, |p|)`. Relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 0.01)`.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    probe: Probe,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = f(params)?;
    if loss.item().is_nan() {
        return Err(CtunError::Numeric {
            detail: "objective returned NaN".into(),
        });
    }
    backward(&loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.shape().count()]);
        let count = p.shape().count();
        let coords: Vec<usize> = match probe {
            Probe::All => (0..count).collect(),
            Probe::Sample(k) => {
                let mut idx: Vec<usize> = (0..count).collect();
                idx.shuffle(&mut rng);
                idx.truncate(k.min(count));
                idx
            }
        };
        for i in coords {
            let orig = p.data()[i];
            let step = eps * orig.abs().max(1.0);

            p.update_data(|d| d[i] = orig + step);
            let up = f(params)?.item();
            p.update_data(|d| d[i] = orig - step);
            let down = f(params)?.item();
            p.update_data(|d| d[i] = orig);

            if up.is_nan() || down.is_nan() {
                return Err(CtunError::Numeric {
                    detail: format!("objective returned NaN while probing coordinate {i}"),
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(0.01);
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// One entry of the verification suite: op name, measured error, tolerance.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}


/// The full float64 verification suite: every differentiable operation plus
/// the tiny end-to-end model. Per-op tolerance 1e-5; end-to-end 1e-4.
pub fn run_suite(seed: u64) -> Result<Vec<CheckReport>> {
    use crate::model::{CtunConfig, CtunModel};
    use crate::tensor::{ops, Shape};
    use crate::train::{charbonnier_loss, fft_loss};
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let rand_leaf = |rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64| {
        Tensor::leaf(
            (0..shape.count()).map(|_| rng.gen_range(lo..hi)).collect(),
            shape,
            true,
        )
    };

    // conv2d -> sigmoid chain, gradients w.r.t. input, weights, bias
    {
        let x = rand_leaf(&mut rng, Shape::new(1, 2, 5, 5), -1.0, 1.0);
        let w = rand_leaf(&mut rng, Shape::new(3, 2, 3, 3), -0.5, 0.5);
        let b = rand_leaf(&mut rng, Shape::new(1, 3, 1, 1), -0.5, 0.5);
        let err = grad_check(
            |ps| Ok(ops::sum(&ops::sigmoid(&ops::conv2d(&ps[0], &ps[1], &ps[2], 1, 1)?))),
            &[x, w, b],
            1e-4,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "conv2d+sigmoid", max_rel_error: err, tolerance: 1e-5 });
    }

    // conv1x1
    {
        let x = rand_leaf(&mut rng, Shape::new(1, 3, 4, 4), -1.0, 1.0);
        let w = rand_leaf(&mut rng, Shape::new(2, 3, 1, 1), -0.5, 0.5);
        let b = rand_leaf(&mut rng, Shape::new(1, 2, 1, 1), -0.5, 0.5);
        let err = grad_check(
            |ps| Ok(ops::sum(&ops::mul(&ops::conv1x1(&ps[0], &ps[1], &ps[2])?, &ops::conv1x1(&ps[0], &ps[1], &ps[2])?)?)),
            &[x, w, b],
            1e-4,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "conv1x1", max_rel_error: err, tolerance: 1e-5 });
    }

    // strided conv
    {
        let x = rand_leaf(&mut rng, Shape::new(1, 2, 5, 5), -1.0, 1.0);
        let w = rand_leaf(&mut rng, Shape::new(2, 2, 3, 3), -0.5, 0.5);
        let b = rand_leaf(&mut rng, Shape::new(1, 2, 1, 1), -0.5, 0.5);
        let err = grad_check(
            |ps| Ok(ops::sum(&ops::conv2d(&ps[0], &ps[1], &ps[2], 2, 1)?)),
            &[x, w, b],
            1e-4,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "conv2d(stride 2)", max_rel_error: err, tolerance: 1e-5 });
    }

    // layer_norm
    {
        let x = rand_leaf(&mut rng, Shape::new(1, 3, 4, 4), -1.0, 1.0);
        let g = rand_leaf(&mut rng, Shape::new(1, 3, 1, 1), 0.5, 1.5);
        let b = rand_leaf(&mut rng, Shape::new(1, 3, 1, 1), -0.5, 0.5);
        let err = grad_check(
            |ps| {
                let y = ops::layer_norm(&ps[0], &ps[1], &ps[2], 1e-3)?;
                Ok(ops::sum(&ops::mul(&y, &y)?))
            },
            &[x, g, b],
            1e-5,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "layer_norm", max_rel_error: err, tolerance: 1e-5 });
    }

    // pixel_shuffle / unshuffle
    {
        let x = rand_leaf(&mut rng, Shape::new(1, 8, 3, 3), -1.0, 1.0);
        let err = grad_check(
            |ps| {
                let y = ops::pixel_unshuffle(&ops::pixel_shuffle(&ps[0], 2)?, 2)?;
                Ok(ops::sum(&ops::mul(&y, &y)?))
            },
            &[x],
            1e-4,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "pixel_shuffle", max_rel_error: err, tolerance: 1e-5 });
    }

    // bilinear resize
    {
        let x = rand_leaf(&mut rng, Shape::new(1, 2, 4, 4), -1.0, 1.0);
        let err = grad_check(
            |ps| {
                let y = ops::bilinear_resize(&ps[0], 4.0)?;
                Ok(ops::sum(&ops::mul(&y, &y)?))
            },
            &[x],
            1e-5,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "bilinear_resize", max_rel_error: err, tolerance: 1e-5 });
    }

    // concat + split routing
    {
        let a = rand_leaf(&mut rng, Shape::new(1, 2, 3, 3), -1.0, 1.0);
        let b = rand_leaf(&mut rng, Shape::new(1, 3, 3, 3), -1.0, 1.0);
        let err = grad_check(
            |ps| {
                let cat = ops::concat_channels(&[&ps[0], &ps[1]])?;
                let parts = ops::split_channels(&cat, &[1, 3, 1])?;
                let m = ops::mul(&parts[0], &parts[2])?;
                Ok(ops::add(&ops::sum(&m), &ops::sum(&parts[1]))?.clone())
            },
            &[a, b],
            1e-4,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "concat/split", max_rel_error: err, tolerance: 1e-5 });
    }

    // elementwise chain with the leaky kink avoided by at least 10*eps
    {
        let eps = 1e-5;
        let vals: Vec<f64> = (0..24)
            .map(|_| {
                let v: f64 = rng.gen_range(10.0 * eps..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::leaf(vals, Shape::new(1, 2, 3, 4), true);
        let err = grad_check(
            |ps| {
                let a = ops::leaky_relu(&ps[0], 0.1);
                let b = ops::tanh_act(&ops::sigmoid(&a));
                let c = ops::sqrt_elem(&ops::add_scalar(&ops::mul(&b, &b)?, 0.5));
                Ok(ops::mean(&ops::abs_elem(&ops::add_scalar(&c, 1.0))))
            },
            &[x],
            eps,
            Probe::All,
            seed,
        )?;
        reports.push(CheckReport { name: "elementwise+leaky_relu", max_rel_error: err, tolerance: 1e-5 });
    }

    // losses
    {
        let p = rand_leaf(&mut rng, Shape::new(1, 1, 4, 4), -1.0, 1.0);
        let t = Tensor::from_vec(
            (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Shape::new(1, 1, 4, 4),
        );
        let err = grad_check(|ps| charbonnier_loss(&ps[0], &t, 1e-3), &[p], 1e-5, Probe::All, seed)?;
        reports.push(CheckReport { name: "charbonnier_loss", max_rel_error: err, tolerance: 1e-5 });
    }
    {
        let p = rand_leaf(&mut rng, Shape::new(1, 1, 8, 8), -1.0, 1.0);
        let t = Tensor::from_vec(
            (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Shape::new(1, 1, 8, 8),
        );
        let err = grad_check(|ps| fft_loss(&ps[0], &t), &[p], 1e-6, Probe::Sample(32), seed)?;
        reports.push(CheckReport { name: "fft_loss", max_rel_error: err, tolerance: 1e-5 });
    }

    // model components at the tiny configuration
    let frame = |rng: &mut ChaCha8Rng| {
        Tensor::from_vec(
            (0..3 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect(),
            Shape::new(1, 3, 8, 8),
        )
    };
    let component = |name: &'static str,
                     model: &CtunModel<f64>,
                     prefix: &str,
                     f: &dyn Fn(&CtunModel<f64>) -> Result<Tensor<f64>>,
                     reports: &mut Vec<CheckReport>|
     -> Result<()> {
        let tensors: Vec<Tensor<f64>> = model
            .params()
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect();
        let err = grad_check(|_| f(model), &tensors, 1e-5, Probe::Sample(3), seed)?;
        reports.push(CheckReport { name, max_rel_error: err, tolerance: 1e-5 });
        Ok(())
    };

    {
        let model = CtunModel::<f64>::init(CtunConfig::tiny(), seed.wrapping_add(1), true)?;
        let x = frame(&mut rng);
        component(
            "extract_features",
            &model,
            "extractor",
            &|m| Ok(ops::sum(&m.extract_features(&x)?)),
            &mut reports,
        )?;

        let fa = rand_leaf(&mut rng, Shape::new(1, 4, 8, 8), -1.0, 1.0);
        let fb = Tensor::from_vec(
            (0..4 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Shape::new(1, 4, 8, 8),
        );
        let fc = Tensor::from_vec(
            (0..4 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Shape::new(1, 4, 8, 8),
        );
        component(
            "icam_cascade+gate_fuse",
            &model,
            "icam",
            &|m| {
                let (ap, ac, an) = m.icam_cascade(&fa, &fb, &fc)?;
                let fused = crate::model::gate_fuse(&ap, &ac, &an)?;
                Ok(ops::sum(&ops::mul(&fused, &fused)?))
            },
            &mut reports,
        )?;

        component(
            "propagate_forward",
            &model,
            "prop",
            &|m| {
                let h = m.propagate_forward(&fa, &fb, &fc)?;
                Ok(ops::sum(&ops::mul(&h, &h)?))
            },
            &mut reports,
        )?;

        component(
            "encode_hidden+ugru(split)",
            &model,
            "hu",
            &|m| {
                let enc = m.encode_hidden(&fa, &fb, &fc)?;
                let out = m.ugru_update(&enc, &fb)?;
                Ok(ops::sum(&ops::mul(&out, &out)?))
            },
            &mut reports,
        )?;

        let target = Tensor::from_vec(
            (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
            Shape::new(1, 3, 32, 32),
        );
        component(
            "reconstruct+charbonnier",
            &model,
            "recon",
            &|m| {
                let y = m.reconstruct(&fa, &fb, &fc, &x)?;
                // smoother eps keeps central-difference truncation error far
                // below the tolerance; the gradient path is identical
                charbonnier_loss(&y, &target, 1e-2)
            },
            &mut reports,
        )?;
    }

    // shared-gate ablation variant
    {
        let mut config = CtunConfig::tiny();
        config.ugru_variant = crate::model::UgruVariant::Shared;
        let model = CtunModel::<f64>::init(config, seed.wrapping_add(2), true)?;
        let m_in = Tensor::from_vec(
            (0..4 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Shape::new(1, 4, 8, 8),
        );
        let h_in = Tensor::from_vec(
            (0..4 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Shape::new(1, 4, 8, 8),
        );
        component(
            "ugru(shared)",
            &model,
            "hu.ugru",
            &|m| {
                let out = m.ugru_update(&m_in, &h_in)?;
                Ok(ops::sum(&ops::mul(&out, &out)?))
            },
            &mut reports,
        )?;
    }

    // end-to-end: three frames through the full model, Charbonnier objective
    {
        use crate::data::FrameSequence;
        let model = CtunModel::<f64>::init(CtunConfig::tiny(), seed.wrapping_add(3), true)?;
        let frames: Vec<Tensor<f64>> = (0..3).map(|_| frame(&mut rng)).collect();
        let targets: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                Tensor::from_vec(
                    (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    Shape::new(1, 3, 32, 32),
                )
            })
            .collect();
        let tensors: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| t.clone()).collect();
        let err = grad_check(
            |_| {
                let seq = FrameSequence::new(frames.clone(), "gradcheck")?;
                let out = model.super_resolve_sequence(&seq)?;
                let mut total = Tensor::scalar(0.0);
                for (y, t) in out.frames.iter().zip(&targets) {
                    total = ops::add(&total, &charbonnier_loss(y, t, 1e-2)?)?;
                }
                Ok(total)
            },
            &tensors,
            1e-5,
            Probe::Sample(2),
            seed,
        )?;
        reports.push(CheckReport { name: "end-to-end tiny model", max_rel_error: err, tolerance: 1e-4 });
    }

    Ok(reports)
}
