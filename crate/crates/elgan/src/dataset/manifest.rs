//! Dataset manifest: JSON document listing samples, split assignments, and
//! the master seed used to build the dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    load_gray_png, load_mask_png, save_gray_png, save_mask_png, DefectClass, ImageSample,
    Provenance, Split,
};
use crate::error::{Error, Result};
use crate::tensor::nn::RNG_SCHEME;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One manifest row; paths are relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    /// Audit-only ground truth carried alongside automatic masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    pub classes: BTreeSet<DefectClass>,
    pub provenance: Provenance,
}

impl SampleMeta {
    pub fn is_defective(&self) -> bool {
        !self.classes.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Named, versioned pseudo-random scheme the dataset was built with.
    #[serde(default = "default_rng_scheme")]
    pub rng_scheme: String,
    pub samples: Vec<SampleMeta>,
    pub splits: BTreeMap<String, Split>,
}

fn default_rng_scheme() -> String {
    RNG_SCHEME.to_string()
}

impl DatasetManifest {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng_scheme: default_rng_scheme(),
            samples: Vec::new(),
            splits: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Json { path: path.into(), source: e })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: path.into(), source: e })?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Structural invariants: unique ids, and when any split assignment
    /// exists, every sample is assigned exactly one split with no dangling
    /// assignments.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id '{}'", s.id)));
            }
        }
        if !self.splits.is_empty() {
            for s in &self.samples {
                if !self.splits.contains_key(&s.id) {
                    return Err(Error::Data(format!("sample '{}' has no split", s.id)));
                }
            }
            for id in self.splits.keys() {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Data(format!("split entry for unknown id '{id}'")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&SampleMeta> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    pub fn samples_in(&self, split: Split) -> Vec<&SampleMeta> {
        self.samples
            .iter()
            .filter(|s| self.split_of(&s.id) == Some(split))
            .collect()
    }

    /// (defect-free count, per-class defective counts) for one split.
    pub fn class_counts(&self, split: Split) -> (usize, BTreeMap<DefectClass, usize>) {
        let mut free = 0usize;
        let mut by_class = BTreeMap::new();
        for s in self.samples_in(split) {
            if s.classes.is_empty() {
                free += 1;
            }
            for c in &s.classes {
                *by_class.entry(*c).or_insert(0) += 1;
            }
        }
        (free, by_class)
    }

    /// Load pixel data for one sample.
    pub fn load_sample(&self, base_dir: &Path, meta: &SampleMeta) -> Result<ImageSample> {
        let image = load_gray_png(&base_dir.join(&meta.image_path))?;
        let mask = match &meta.mask_path {
            Some(p) => Some(load_mask_png(&base_dir.join(p))?),
            None => None,
        };
        let shadow_mask = match &meta.gt_mask_path {
            Some(p) => Some(load_mask_png(&base_dir.join(p))?),
            None => None,
        };
        let sample = ImageSample {
            id: meta.id.clone(),
            image,
            mask,
            shadow_mask,
            classes: meta.classes.clone(),
            provenance: meta.provenance,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Write a sample's pixel data under `base_dir` and append its row.
    /// Images land in `images/`, masks in `masks/`, audit ground truth in
    /// `gt_masks/`.
    pub fn add_sample(&mut self, base_dir: &Path, sample: &ImageSample) -> Result<()> {
        sample.validate()?;
        let image_rel = PathBuf::from("images").join(format!("{}.png", sample.id));
        fs::create_dir_all(base_dir.join("images"))
            .map_err(|e| Error::io(base_dir.join("images"), e))?;
        save_gray_png(&base_dir.join(&image_rel), &sample.image)?;

        let mask_rel = match &sample.mask {
            Some(mask) => {
                let rel = PathBuf::from("masks").join(format!("{}.png", sample.id));
                fs::create_dir_all(base_dir.join("masks"))
                    .map_err(|e| Error::io(base_dir.join("masks"), e))?;
                save_mask_png(&base_dir.join(&rel), mask)?;
                Some(rel)
            }
            None => None,
        };
        let gt_rel = match &sample.shadow_mask {
            Some(mask) => {
                let rel = PathBuf::from("gt_masks").join(format!("{}.png", sample.id));
                fs::create_dir_all(base_dir.join("gt_masks"))
                    .map_err(|e| Error::io(base_dir.join("gt_masks"), e))?;
                save_mask_png(&base_dir.join(&rel), mask)?;
                Some(rel)
            }
            None => None,
        };
        self.samples.push(SampleMeta {
            id: sample.id.clone(),
            image_path: image_rel,
            mask_path: mask_rel,
            gt_mask_path: gt_rel,
            classes: sample.classes.clone(),
            provenance: sample.provenance,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn tiny_sample(id: &str, defective: bool) -> ImageSample {
        let image = arr2(&[[100u8, 120], [90, 110]]);
        let mut s = ImageSample::defect_free(id, image, Provenance::Synthetic);
        if defective {
            s.classes.insert(DefectClass::Microcrack);
            s.mask = Some(arr2(&[[0u8, 1], [0, 0]]));
        }
        s
    }

    #[test]
    fn manifest_roundtrip_with_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(7);
        m.add_sample(dir.path(), &tiny_sample("a", false)).unwrap();
        m.add_sample(dir.path(), &tiny_sample("b", true)).unwrap();
        m.splits.insert("a".into(), Split::Train);
        m.splits.insert("b".into(), Split::Test);

        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.rng_scheme, RNG_SCHEME);
        assert_eq!(loaded.samples.len(), 2);

        let b = loaded.get("b").unwrap();
        let sample = loaded.load_sample(dir.path(), b).unwrap();
        assert_eq!(sample.mask.unwrap()[[0, 1]], 1);
    }

    #[test]
    fn validate_rejects_dangling_split() {
        let mut m = DatasetManifest::new(0);
        m.splits.insert("ghost".into(), Split::Test);
        assert!(m.validate().is_err());
    }

    #[test]
    fn validate_rejects_missing_split() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(0);
        m.add_sample(dir.path(), &tiny_sample("a", false)).unwrap();
        m.add_sample(dir.path(), &tiny_sample("b", false)).unwrap();
        m.splits.insert("a".into(), Split::Train);
        assert!(m.validate().is_err());
    }

    #[test]
    fn class_counts_recount() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(0);
        m.add_sample(dir.path(), &tiny_sample("a", false)).unwrap();
        m.add_sample(dir.path(), &tiny_sample("b", true)).unwrap();
        m.add_sample(dir.path(), &tiny_sample("c", true)).unwrap();
        for s in &m.samples {
            m.splits.insert(s.id.clone(), Split::Test);
        }
        let (free, by_class) = m.class_counts(Split::Test);
        assert_eq!(free, 1);
        assert_eq!(by_class[&DefectClass::Microcrack], 2);
        assert_eq!(m.class_counts(Split::Train).0, 0);
    }
}
