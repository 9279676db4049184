//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first.iter().chain(&self.second).all(|v| v.is_finite())
    }
}

/// One AdamW update of `params` in place.
///
/// Decay shrinks the pre-update parameters by `1 − lr·λ`; the bias-corrected
/// adaptive step is applied on top. Parameters are rounded to `f32` afterwards
/// so that saved models reproduce them exactly.
pub fn step(params: &mut [f64], grad: &[f64], moments: &mut Moments, cfg: &AdamWConfig) -> Result<()> {
    if grad.len() != params.len() || moments.first.len() != params.len() {
        return Err(Error::invalid(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            epoch: 0,
            step: moments.step as usize,
            detail: format!("non-finite gradient at parameter {i}"),
        });
    }
    moments.step += 1;
    let t = moments.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        let updated = *p * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        *p = updated as f32 as f64;
    }
    Ok(())
}
