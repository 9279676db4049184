//! The trainable quality evaluator: network state, mean-squared-error training
//! with AdamW, inference, and persistence.

pub mod adamw;
pub mod gradcheck;
mod model_file;
pub mod network;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, TrainingTuple};
use crate::error::{Error, Result};
use crate::metrics::{pearson, spearman};
use crate::preprocess::{psi, ModelInput};
use crate::raster::{BinaryMask, BoxPrompt, Image};

pub use adamw::{AdamWConfig, Moments};
pub use model_file::{load, save, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use network::{Architecture, Backbone, BackboneSpec, ConvBackbone, ParamSlice};

/// Architecture, flat parameters and optimizer moments.
///
/// Parameters are always exactly representable as `f32`; arithmetic is `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorState {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub moments: Moments,
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub head_weights: Vec<f64>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: batch 32, 30 epochs.
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            epochs: 30,
            weight_decay: 0.01,
            seed: 0,
            head_weights: vec![1.0, 1.0],
        }
    }
}

impl TrainConfig {
    /// The full-scale setting: batch 128, learning rate 1e-4.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self, heads: usize) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        if self.head_weights.len() < heads || self.head_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid(format!(
                "need {heads} nonnegative head weights, got {:?}",
                self.head_weights
            )));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_spearman: Option<f64>,
    pub val_pearson: Option<f64>,
}

impl RegressorState {
    /// Fan-in scaled uniform weights (bound `sqrt(6 / fan_in)` for convolutions,
    /// `sqrt(1 / fan_in)` for heads), zero biases and zero moments.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.param_count()];
        for slice in arch.param_slices() {
            if slice.is_bias() {
                continue;
            }
            let gain = if slice.name.starts_with("head") { 1.0 } else { 6.0 };
            let bound = (gain / slice.fan_in as f64).sqrt();
            for p in &mut params[slice.range] {
                *p = rng.random_range(-bound..bound) as f32 as f64;
            }
        }
        let moments = Moments::zeros(params.len());
        Ok(Self { arch, params, moments })
    }

    pub fn heads(&self) -> usize {
        self.arch.heads
    }

    pub fn input_side(&self) -> usize {
        self.arch.input_side
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.side() != self.arch.input_side {
            return Err(Error::invalid(format!(
                "model expects {0}x{0} inputs, got {1}x{1}",
                self.arch.input_side,
                input.side()
            )));
        }
        Ok(())
    }

    /// Per-head predictions in `(0, 1)`.
    pub fn forward(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let (out, _, _) = network::forward_with(&self.arch.conv(), self.heads(), &self.params, input);
        Ok(out)
    }

    /// Scores a raw `(image, predicted mask, prompt)` triple.
    pub fn predict(&self, image: &Image, pred_mask: &BinaryMask, prompt: &BoxPrompt) -> Result<Vec<f64>> {
        self.forward(&psi(image, pred_mask, prompt, self.input_side())?)
    }

    /// Scores every tuple; output order follows input order.
    pub fn predict_tuples(&self, tuples: &[TrainingTuple]) -> Result<Vec<Vec<f64>>> {
        tuples
            .par_iter()
            .map(|t| self.predict(&t.image, &t.pred_mask, &t.prompt))
            .collect()
    }
}

/// Weighted squared error over heads.
pub fn loss(pred: &[f64], target: &[f64], head_weights: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || head_weights.len() < pred.len() {
        return Err(Error::invalid(format!(
            "{} predictions, {} targets, {} head weights",
            pred.len(),
            target.len(),
            head_weights.len()
        )));
    }
    Ok(network::weighted_loss(pred, target, head_weights))
}

/// Mean batch loss and its exact gradient with respect to `params`.
///
/// Per-sample work may run in parallel; the reduction always sums in batch order.
pub fn loss_and_grad(
    arch: &Architecture,
    params: &[f64],
    batch: &[(ModelInput, Vec<f64>)],
    head_weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient of an empty batch"));
    }
    arch.validate()?;
    if params.len() != arch.param_count() {
        return Err(Error::invalid(format!(
            "{} parameters supplied for an architecture with {}",
            params.len(),
            arch.param_count()
        )));
    }
    for (input, target) in batch {
        if input.side() != arch.input_side || target.len() != arch.heads {
            return Err(Error::invalid("batch element does not match the architecture"));
        }
    }
    if head_weights.len() < arch.heads {
        return Err(Error::invalid("missing head weights"));
    }
    let backbone = arch.conv();
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|(input, target)| {
            let mut g = vec![0.0; params.len()];
            let l = network::sample_loss_grad(
                &backbone,
                arch.heads,
                params,
                input,
                target,
                head_weights,
                scale,
                &mut g,
            );
            (l, g)
        })
        .collect();
    Ok(reduce_in_order(parts, params.len(), scale))
}

fn reduce_in_order(parts: Vec<(f64, Vec<f64>)>, n: usize, scale: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; n];
    let mut total = 0.0;
    for (l, g) in parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total * scale, grad)
}

/// Gradient of the mean batch loss for `state`.
pub fn grad(state: &RegressorState, batch: &[(ModelInput, Vec<f64>)], head_weights: &[f64]) -> Result<Vec<f64>> {
    loss_and_grad(&state.arch, &state.params, batch, head_weights).map(|(_, g)| g)
}

/// One AdamW update of `state` with `gradient`.
pub fn adamw_step(state: &mut RegressorState, gradient: &[f64], cfg: &AdamWConfig) -> Result<()> {
    adamw::step(&mut state.params, gradient, &mut state.moments, cfg)
}

fn validation_scores(state: &RegressorState, val: &[TrainingTuple]) -> Result<(Option<f64>, Option<f64>)> {
    if val.len() < 2 {
        return Ok((None, None));
    }
    let preds = state.predict_tuples(val)?;
    let predicted: Vec<f64> = preds.iter().map(|p| p[0]).collect();
    let truth: Vec<f64> = val.iter().map(|t| t.q_dice).collect();
    // Degenerate (constant) sequences leave the statistic unreported.
    Ok((spearman(&predicted, &truth).ok(), pearson(&predicted, &truth).ok()))
}

/// Trains a freshly initialized network on `train` with shuffled mini-batch AdamW.
///
/// `on_epoch` sees each epoch's statistics as soon as they are available.
pub fn train(
    train: &[TrainingTuple],
    val: Option<&[TrainingTuple]>,
    arch: Architecture,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(RegressorState, Vec<EpochStats>)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    config.validate(arch.heads)?;
    let mut state = RegressorState::init(arch, derive_seed(config.seed, &[0x1417]))?;
    let heads = state.heads();
    let side = state.input_side();
    let backbone = state.arch.conv();
    let adamw = config.adamw();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut global_step = 0usize;

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[0x5eed, epoch as u64],
        )));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let params = &state.params;
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let t = &train[i];
                    let input = psi(&t.image, &t.pred_mask, &t.prompt, side)?;
                    let mut g = vec![0.0; params.len()];
                    let l = network::sample_loss_grad(
                        &backbone,
                        heads,
                        params,
                        &input,
                        &t.targets(heads),
                        &config.head_weights,
                        scale,
                        &mut g,
                    );
                    Ok((l, g))
                })
                .collect::<Result<_>>()?;
            let (batch_loss, gradient) = reduce_in_order(parts, state.params.len(), scale);
            global_step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    detail: format!("batch loss is {batch_loss}"),
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            adamw_step(&mut state, &gradient, &adamw).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged {
                    epoch,
                    step: global_step,
                    detail,
                },
                other => other,
            })?;
        }
        let (val_spearman, val_pearson) = match val {
            Some(v) => validation_scores(&state, v)?,
            None => (None, None),
        };
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_spearman,
            val_pearson,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((state, history))
}
