//! Training losses: Charbonnier (smooth L1) and a frequency-domain L1.

use super::fft::fft2d;
use crate::error::{CtunError, Result};
use crate::tensor::{ops, Scalar, Tensor};

/// mean(sqrt((pred - target)^2 + eps^2)); smooth everywhere, >= eps with
/// equality iff pred == target.
pub fn charbonnier_loss<E: Scalar>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>> {
    if eps <= 0.0 {
        return Err(CtunError::arg("charbonnier_loss", "eps must be > 0"));
    }
    let d = ops::sub(pred, target)?;
    let sq = ops::add_scalar(&ops::mul(&d, &d)?, eps * eps);
    Ok(ops::mean(&ops::sqrt_elem(&sq)))
}

/// Mean L1 distance between the real and imaginary spectra of `pred` and
/// `target`, averaged over the stacked parts.
pub fn fft_loss<E: Scalar>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    if pred.shape() != target.shape() {
        return Err(CtunError::shape(
            "fft_loss",
            format!("{} vs {}", pred.shape(), target.shape()),
        ));
    }
    let (pr, pi) = fft2d(pred)?;
    let (tr, ti) = fft2d(target)?;
    let re_l1 = ops::mean(&ops::abs_elem(&ops::sub(&pr, &tr)?));
    let im_l1 = ops::mean(&ops::abs_elem(&ops::sub(&pi, &ti)?));
    Ok(ops::scale(&ops::add(&re_l1, &im_l1)?, 0.5))
}
