//! Ground-truth-free segmentation quality estimation.
//!
//! A small convolutional regressor learns to predict the Dice score (and
//! optionally a normalized Hausdorff distance) of a predicted mask from the
//! image, the mask and the box prompt alone. The predicted scores then drive
//! three utilities: flagging poor segmentations, ranking segmenters without
//! ground truth, and choosing the best segmenter output per sample.
//!
//! Modules, bottom-up:
//!
//! - [`raster`]: images, binary masks, box prompts.
//! - [`metrics`]: Dice, Hausdorff, Pearson and Spearman.
//! - [`preprocess`]: the mask-into-image blend, crop and resize.
//! - [`datagen`]: synthetic training tuples and the on-disk dataset format.
//! - [`regressor`]: the trainable evaluator, AdamW and the model file.
//! - [`evaluate`]: correlation, flagging, benchmarking and per-sample selection.
//! - [`theory`]: executable reductions and accuracy predicates.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod preprocess;
pub mod raster;
pub mod regressor;
pub mod theory;

pub use error::{Error, Result};
pub use raster::{BinaryMask, BoxPrompt, Image};

/// Version string embedded in reports and model headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
