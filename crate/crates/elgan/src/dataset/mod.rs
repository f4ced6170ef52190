//! Data model shared by every stage: samples, manifests, normalization,
//! dataset splitting, and patch extraction.
//!
//! Images are 8-bit grayscale PNGs on disk; manifests are JSON documents
//! with paths relative to the manifest file.

mod manifest;
mod patches;
mod pixels;
mod splits;

pub use manifest::{DatasetManifest, SampleMeta, MANIFEST_FILE};
pub use patches::{extract_patches, reassemble_patches};
pub use pixels::{
    denormalize, load_gray_png, load_mask_png, normalize, normalize_2d, resize_image,
    resize_mask, save_gray_png, save_mask_png, NormalizedImage,
};
pub use splits::{split_dataset, SplitScheme};

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of set pixels in a binary mask.
pub fn mask_pixel_count(mask: &Array2<u8>) -> usize {
    mask.iter().filter(|&&v| v == 1).count()
}

/// Closed defect taxonomy. `Break` and `BadSoldering` exist in the data
/// model but are held out from training and quantitative evaluation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Crack,
    Microcrack,
    FingerInterruption,
    Break,
    BadSoldering,
}

impl DefectClass {
    pub const ALL: [DefectClass; 5] = [
        DefectClass::Crack,
        DefectClass::Microcrack,
        DefectClass::FingerInterruption,
        DefectClass::Break,
        DefectClass::BadSoldering,
    ];

    /// Classes evaluated quantitatively.
    pub const EVALUATED: [DefectClass; 3] = [
        DefectClass::Crack,
        DefectClass::Microcrack,
        DefectClass::FingerInterruption,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DefectClass::Crack => "crack",
            DefectClass::Microcrack => "microcrack",
            DefectClass::FingerInterruption => "finger_interruption",
            DefectClass::Break => "break",
            DefectClass::BadSoldering => "bad_soldering",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Domain(format!("unknown defect class '{name}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    Autolabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One grayscale cell image with optional pixel mask and class tags.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub image: Array2<u8>,
    /// Binary {0,1} defect mask, same shape as `image`.
    pub mask: Option<Array2<u8>>,
    /// Original ground-truth mask kept for audit when `mask` was generated
    /// automatically. Never fed to training.
    pub shadow_mask: Option<Array2<u8>>,
    pub classes: BTreeSet<DefectClass>,
    pub provenance: Provenance,
}

impl ImageSample {
    pub fn defect_free(id: impl Into<String>, image: Array2<u8>, provenance: Provenance) -> Self {
        Self {
            id: id.into(),
            image,
            mask: None,
            shadow_mask: None,
            classes: BTreeSet::new(),
            provenance,
        }
    }

    pub fn is_defective(&self) -> bool {
        !self.classes.is_empty()
    }

    /// Check the type invariants: mask shape matches the image, mask values
    /// are binary, and emptiness of `classes` agrees with the mask.
    pub fn validate(&self) -> Result<()> {
        if let Some(mask) = &self.mask {
            if mask.dim() != self.image.dim() {
                return Err(Error::Shape(format!(
                    "sample '{}': mask shape {:?} != image shape {:?}",
                    self.id,
                    mask.dim(),
                    self.image.dim()
                )));
            }
            if mask.iter().any(|&v| v > 1) {
                return Err(Error::Data(format!(
                    "sample '{}': mask values outside {{0,1}}",
                    self.id
                )));
            }
            let any_set = mask.iter().any(|&v| v == 1);
            if any_set != self.is_defective() {
                return Err(Error::Data(format!(
                    "sample '{}': classes {:?} disagree with mask support",
                    self.id, self.classes
                )));
            }
        }
        Ok(())
    }
}
