//! Analytic gradients against central finite differences of the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{forward_with, weighted_loss};
use super::{loss_and_grad, Architecture, BackboneSpec, RegressorState};
use crate::error::Result;
use crate::preprocess::ModelInput;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub batch_size: usize,
    pub step: f64,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// A ~850-parameter network on 12×12 inputs.
pub fn small_check_architecture(heads: usize) -> Architecture {
    Architecture {
        backbone: BackboneSpec::Conv { widths: vec![6, 12] },
        heads,
        input_side: 12,
    }
}

/// Mean batch loss computed from forward passes only.
fn batch_loss(arch: &Architecture, params: &[f64], batch: &[(ModelInput, Vec<f64>)], weights: &[f64]) -> f64 {
    let backbone = arch.conv();
    let total: f64 = batch
        .iter()
        .map(|(x, t)| {
            let (out, _, _) = forward_with(&backbone, arch.heads, params, x);
            weighted_loss(&out, t, weights)
        })
        .sum();
    total / batch.len() as f64
}

/// Compares every coordinate of the analytic gradient with a central difference
/// of step `h` on a random batch of `batch_size` samples.
pub fn gradient_check(
    arch: Architecture,
    seed: u64,
    batch_size: usize,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let state = RegressorState::init(arch, seed)?;
    let arch = &state.arch;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let side = arch.input_side;
    let weights: Vec<f64> = (0..arch.heads).map(|h| 1.0 - 0.3 * h as f64).collect();
    let batch: Vec<(ModelInput, Vec<f64>)> = (0..batch_size)
        .map(|_| {
            let x = (0..3 * side * side).map(|_| rng.random::<f64>()).collect();
            let t = (0..arch.heads).map(|_| rng.random::<f64>()).collect();
            (ModelInput::from_planar(side, x).expect("sized"), t)
        })
        .collect();

    let (_, analytic) = loss_and_grad(arch, &state.params, &batch, &weights)?;
    let mut params = state.params.clone();
    let mut worst = (0.0, 0usize, 0.0, 0.0);
    for i in 0..params.len() {
        let original = params[i];
        params[i] = original + h;
        let up = batch_loss(arch, &params, &batch, &weights);
        params[i] = original - h;
        let down = batch_loss(arch, &params, &batch, &weights);
        params[i] = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > worst.0 {
            worst = (rel, i, a, numeric);
        }
    }
    Ok(GradCheckReport {
        param_count: params.len(),
        batch_size,
        step: h,
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic_at_worst: worst.2,
        numeric_at_worst: worst.3,
        tolerance,
        passed: worst.0 < tolerance,
    })
}
