//! elgan — two-stage defect inspection for electroluminescence cell images.
//!
//! Stage one trains a reconstruction-based anomaly detector on defect-free
//! cells only (adversarial latent-space training, then an encoder that maps
//! images into that latent space). Deviations between an image and its
//! reconstruction score and localize defects. Stage two turns those pixel
//! deviations into automatic labels and trains a supervised segmentation
//! network on them.
//!
//! Module map:
//!
//! - [`tensor`] — tape autodiff, layers, optimizers.
//! - [`dataset`] — samples, manifests, normalization, splits, patches.
//! - [`synthcell`] — procedural benchmark cells with exact defect masks.
//! - [`models`] — declarative network specs, shape checks, checkpoints.
//! - [`training`] — adversarial phase 1, encoder phase 2, autoencoders.
//! - [`anomaly`] — scoring, residual maps, thresholds, patch/whole modes.
//! - [`autolabel`] — automatic pixel-wise annotation of defective samples.
//! - [`segmentation`] — dice-loss training and inference for the U-Net.
//! - [`evalkit`] — confusion metrics, balanced ROC/AUC, timing protocol.
//! - [`pipeline`] — staged workspace orchestration with integrity audits.

pub mod dataset;
pub mod error;
pub mod synthcell;
pub mod tensor;

pub use error::{Error, Result};
