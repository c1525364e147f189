//! Bias-corrected Adam with in-place parameter updates.

use crate::error::{CtunError, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;
use std::collections::HashMap;

/// First/second moment estimates per parameter, plus the shared step count.
#[derive(Default)]
pub struct AdamState {
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step over every parameter in the store, reading each
/// tensor's accumulated gradient (treated as zero when absent). Moment math
/// runs in f64 regardless of the parameter dtype.
pub fn adam_step<E: Scalar>(
    store: &ParamStore<E>,
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    let (b1, b2) = betas;
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for (name, param) in store.iter() {
        let count = param.shape().count();
        let grad = param.grad();
        if let Some(g) = &grad {
            if g.iter().any(|v| v.is_nan()) {
                return Err(CtunError::Numeric {
                    detail: format!("NaN gradient in parameter '{name}'"),
                });
            }
        }
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; count], vec![0.0; count]));
        param.update_data(|data| {
            for i in 0..count {
                let gi = grad.as_ref().map_or(0.0, |g| g[i].to_f64());
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] = E::from_f64(data[i].to_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        });
    }
    Ok(())
}
