//! Single-cycle cosine annealing, no restarts.

use crate::error::{CtunError, Result};

/// lr(t) = lr_min + 0.5 (lr0 - lr_min)(1 + cos(pi t / T)) for 0 <= t <= T.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if t > total {
        return Err(CtunError::arg(
            "cosine_lr",
            format!("step {t} is past the schedule end {total}"),
        ));
    }
    if total == 0 {
        return Ok(lr0);
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_the_initial_rate() {
        assert_eq!(cosine_lr(0, 1000, 2e-4, 0.0).unwrap(), 2e-4);
    }

    #[test]
    fn ends_at_the_floor() {
        let v = cosine_lr(1000, 1000, 2e-4, 0.0).unwrap();
        assert!(v.abs() < 1e-19, "{v}");
    }

    #[test]
    fn halfway_is_half_the_rate() {
        let v = cosine_lr(500, 1000, 2e-4, 0.0).unwrap();
        assert!((v - 1e-4).abs() < 1e-19);
    }

    #[test]
    fn monotonically_non_increasing() {
        let mut prev = f64::INFINITY;
        for t in 0..=400 {
            let v = cosine_lr(t, 400, 2e-4, 1e-6).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn past_the_end_is_an_error() {
        assert!(cosine_lr(1001, 1000, 2e-4, 0.0).is_err());
    }
}
