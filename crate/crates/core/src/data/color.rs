//! Color conversion for metric computation.

use crate::error::{CtunError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// BT.601 limited-range luma from RGB in [0,1], returned in 0-255 units:
/// Y = 65.481 R + 128.553 G + 24.966 B + 16.
pub fn rgb_to_y<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let xs = x.shape();
    if xs.c != 3 {
        return Err(CtunError::shape(
            "rgb_to_y",
            format!("expected 3 channels, got {}", xs.c),
        ));
    }
    let area = xs.h * xs.w;
    let xd = x.data();
    let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
    let mut out = vec![E::ZERO; out_shape.count()];
    for n in 0..xs.n {
        for i in 0..area {
            let r = xd[xs.index(n, 0, 0, 0) + i].to_f64();
            let g = xd[xs.index(n, 1, 0, 0) + i].to_f64();
            let b = xd[xs.index(n, 2, 0, 0) + i].to_f64();
            out[n * area + i] = E::from_f64(65.481 * r + 128.553 * g + 24.966 * b + 16.0);
        }
    }
    Ok(Tensor::from_vec(out, out_shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(r: f64, g: f64, b: f64) -> f64 {
        let x = Tensor::from_vec(vec![r, g, b], Shape::new(1, 3, 1, 1));
        rgb_to_y(&x).unwrap().item()
    }

    #[test]
    fn black_maps_to_16() {
        assert!((one_pixel(0.0, 0.0, 0.0) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn white_maps_to_235() {
        assert!((one_pixel(1.0, 1.0, 1.0) - 235.0).abs() < 1e-12);
    }

    #[test]
    fn mid_gray_maps_to_125_5() {
        assert!((one_pixel(0.5, 0.5, 0.5) - 125.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_rgb() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(rgb_to_y(&x).is_err());
    }
}
