//! Toy-scale end-to-end training on synthetic sequences.

mod adam;
mod fft;
mod loss;
mod schedule;
mod synth;

pub use adam::{adam_step, AdamState};
pub use fft::fft2d;
pub use loss::{charbonnier_loss, fft_loss};
pub use schedule::cosine_lr;
pub use synth::{make_synthetic_sequence, Motion};

use crate::data::{degrade, DegradationSpec, FrameSequence};
use crate::error::{CtunError, Result};
use crate::model::{CtunConfig, CtunModel, ParamStore};
use crate::tensor::{backward, ops, Scalar, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub betas: (f64, f64),
    pub iters: usize,
    /// LR patch edge; must be a power of two so the FFT loss needs no padding.
    pub patch: usize,
    pub batch: usize,
    pub frames: usize,
    pub charbonnier_eps: f64,
    pub fft_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            betas: (0.9, 0.99),
            iters: 2000,
            patch: 32,
            batch: 2,
            frames: 8,
            charbonnier_eps: 1e-3,
            fft_weight: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(CtunError::arg("train", "lr0 must be > 0"));
        }
        for (i, b) in [self.betas.0, self.betas.1].iter().enumerate() {
            if !(0.0..1.0).contains(b) {
                return Err(CtunError::arg("train", format!("beta{} out of [0,1)", i + 1)));
            }
        }
        if !self.patch.is_power_of_two() {
            return Err(CtunError::arg("train", "patch must be a power of two"));
        }
        if self.batch == 0 || self.frames == 0 {
            return Err(CtunError::arg("train", "batch and frames must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the loss log: means over the trailing window of up to 100
/// iterations, emitted every 100 iterations (and at the final one).
#[derive(Clone, Copy, Debug)]
pub struct LossRecord {
    pub iter: usize,
    pub charbonnier: f64,
    pub fft: f64,
    pub total: f64,
    pub lr: f64,
}

/// The fixed training material for a run: a synthetic HR sequence and its
/// bicubic-degraded LR counterpart.
pub fn training_data<E: Scalar>(
    config: &CtunConfig,
    train: &TrainConfig,
) -> Result<(FrameSequence<E>, FrameSequence<E>)> {
    let hr_size = train.patch * config.scale * 2;
    let hr = make_synthetic_sequence(
        train.frames,
        hr_size,
        hr_size,
        Motion::default_shift(),
        train.seed,
    )?;
    let lr = degrade(
        &hr,
        DegradationSpec::Bicubic {
            scale: config.scale,
        },
    )?;
    Ok((hr, lr))
}

fn crop<E: Scalar>(frame: &Tensor<E>, top: usize, left: usize, h: usize, w: usize) -> Tensor<E> {
    let s = frame.shape();
    let d = frame.data();
    let out_shape = Shape::new(1, s.c, h, w);
    let mut out = vec![E::ZERO; out_shape.count()];
    for c in 0..s.c {
        for y in 0..h {
            let src = s.index(0, c, top + y, left);
            let dst = out_shape.index(0, c, y, 0);
            out[dst..dst + w].copy_from_slice(&d[src..src + w]);
        }
    }
    Tensor::from_vec(out, out_shape)
}

/// Train from scratch on random crops of one synthetic sequence, with the
/// Charbonnier + weighted frequency loss over every output frame, Adam, and
/// single-cycle cosine annealing. Calls `progress` as each loss row is
/// recorded. Deterministic for a given seed.
pub fn train_loop_with_progress(
    model_config: CtunConfig,
    train: TrainConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<(ParamStore<f32>, Vec<LossRecord>)> {
    model_config.validate()?;
    train.validate()?;
    let scale = model_config.scale;
    let (hr_seq, lr_seq) = training_data::<f32>(&model_config, &train)?;
    let (lr_h, lr_w) = lr_seq.frame_size();

    let model = CtunModel::<f32>::init(model_config, train.seed, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed);
    let mut state = AdamState::new();
    let mut history = Vec::new();
    let mut window: Vec<(f64, f64)> = Vec::new(); // (charbonnier, fft) per iter

    for iter in 1..=train.iters {
        let lr_now = cosine_lr(iter - 1, train.iters, train.lr0, 0.0)?;
        let mut total = Tensor::scalar(0.0f32);
        let mut charb_sum = 0.0f64;
        let mut fft_sum = 0.0f64;
        for _ in 0..train.batch {
            let top = rng.gen_range(0..=lr_h - train.patch);
            let left = rng.gen_range(0..=lr_w - train.patch);
            let lr_patches: Vec<Tensor<f32>> = lr_seq
                .frames
                .iter()
                .map(|f| crop(f, top, left, train.patch, train.patch))
                .collect();
            let hr_patches: Vec<Tensor<f32>> = hr_seq
                .frames
                .iter()
                .map(|f| {
                    crop(
                        f,
                        top * scale,
                        left * scale,
                        train.patch * scale,
                        train.patch * scale,
                    )
                })
                .collect();
            let mut batch_loss = Tensor::scalar(0.0f32);
            model.super_resolve_with(
                train.frames,
                |t| Ok(lr_patches[t].clone()),
                |t, y| {
                    let ch = charbonnier_loss(&y, &hr_patches[t], train.charbonnier_eps)?;
                    let ff = fft_loss(&y, &hr_patches[t])?;
                    charb_sum += ch.item() as f64;
                    fft_sum += ff.item() as f64;
                    let frame_loss = ops::add(&ch, &ops::scale(&ff, train.fft_weight))?;
                    batch_loss = ops::add(&batch_loss, &frame_loss)?;
                    Ok(())
                },
            )?;
            total = ops::add(&total, &batch_loss)?;
        }
        let denom = (train.batch * train.frames) as f64;
        let loss = ops::scale(&total, 1.0 / denom);
        let loss_value = loss.item() as f64;
        if loss_value.is_nan() {
            return Err(CtunError::Numeric {
                detail: format!("NaN loss at iteration {iter}"),
            });
        }
        backward(&loss)?;
        adam_step(model.params(), &mut state, lr_now, train.betas, 1e-8)?;
        for (_, p) in model.params().iter() {
            p.zero_grad();
        }

        window.push((charb_sum / denom, fft_sum / denom));
        if iter % 100 == 0 || iter == train.iters {
            let n = window.len() as f64;
            let ch = window.iter().map(|w| w.0).sum::<f64>() / n;
            let ff = window.iter().map(|w| w.1).sum::<f64>() / n;
            let rec = LossRecord {
                iter,
                charbonnier: ch,
                fft: ff,
                total: ch + train.fft_weight * ff,
                lr: lr_now,
            };
            progress(&rec);
            history.push(rec);
            window.clear();
        }
    }
    Ok((model.into_params(), history))
}

/// [`train_loop_with_progress`] without a progress callback.
pub fn train_loop(
    model_config: CtunConfig,
    train: TrainConfig,
) -> Result<(ParamStore<f32>, Vec<LossRecord>)> {
    train_loop_with_progress(model_config, train, |_| {})
}

/// Write the loss history as CSV: iteration, charbonnier, fft, total, lr.
pub fn write_loss_csv(records: &[LossRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iteration,charbonnier,fft,total,lr")?;
    for r in records {
        writeln!(
            f,
            "{},{:.8},{:.8},{:.8},{:.8e}",
            r.iter, r.charbonnier, r.fft, r.total, r.lr
        )?;
    }
    Ok(())
}
