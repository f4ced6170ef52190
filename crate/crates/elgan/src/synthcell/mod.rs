//! Procedural generator of electroluminescence-like monocrystalline cell
//! images with injectable defects and exact ground-truth masks.
//!
//! Cells are a bright smooth background crossed by darker vertical busbar
//! bands and thin periodic horizontal finger lines, with multiplicative
//! grain noise. Defects multiply the affected region by `1 - intensity_drop`
//! (less current flow shows up darker), and the mask is exactly the set of
//! pixels whose stored 8-bit value changed.
//!
//! Every sample derives its own random stream from the master seed and its
//! id, so generation is reproducible sample-by-sample and parallelizable.

mod draw;

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{mask_pixel_count, DatasetManifest, DefectClass, ImageSample, Provenance};
use crate::error::{Error, Result};
use crate::tensor::nn::{derive_seed, rng_for, sample_standard_normal};

/// Geometry and texture of one defect-free cell.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CellParams {
    /// Pixels per side; at least 64.
    pub size: usize,
    pub busbar_count: usize,
    /// Rows between adjacent finger lines; at least 2.
    pub finger_spacing: usize,
    /// Standard deviation of the multiplicative grain noise.
    pub grain_noise_scale: f32,
    /// Background brightness in (0, 1).
    pub base_intensity: f32,
    pub seed: u64,
}

impl CellParams {
    pub fn with_size(size: usize, seed: u64) -> Self {
        Self {
            size,
            busbar_count: 2,
            finger_spacing: 4,
            grain_noise_scale: 0.05,
            base_intensity: 0.75,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(Error::Config(format!("cell size {} < 64", self.size)));
        }
        if self.finger_spacing < 2 {
            return Err(Error::Config("finger_spacing must be at least 2".into()));
        }
        if !(0.0 < self.base_intensity && self.base_intensity < 1.0) {
            return Err(Error::Config("base_intensity must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Rows carrying finger lines.
    pub fn finger_rows(&self) -> Vec<usize> {
        (0..self.size)
            .filter(|y| y % self.finger_spacing == self.finger_spacing / 2)
            .collect()
    }

    /// Column centers of the busbar bands.
    pub fn busbar_centers(&self) -> Vec<usize> {
        (0..self.busbar_count)
            .map(|i| (i + 1) * self.size / (self.busbar_count + 1))
            .collect()
    }

    fn busbar_half_width(&self) -> usize {
        (self.size / 40).max(1)
    }
}

/// One defect to inject.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DefectSpec {
    pub class: DefectClass,
    /// Multiplicative darkening in (0, 1]; 1 drops the region to black.
    pub intensity_drop: f32,
    pub geometry_seed: u64,
}

impl DefectSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.intensity_drop && self.intensity_drop <= 1.0) {
            return Err(Error::Domain("intensity_drop must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Noise-free cell template in [0, 1].
fn cell_template(params: &CellParams) -> Array2<f32> {
    let s = params.size;
    let base = params.base_intensity;
    let half = (s as f32 - 1.0) / 2.0;
    let mut img = Array2::from_shape_fn((s, s), |(y, x)| {
        // gentle radial falloff so the background is smooth, not flat
        let dy = (y as f32 - half) / half;
        let dx = (x as f32 - half) / half;
        base * (1.0 - 0.08 * (dy * dy + dx * dx))
    });
    for y in params.finger_rows() {
        for x in 0..s {
            img[[y, x]] *= 0.82;
        }
    }
    let hw = params.busbar_half_width();
    for cx in params.busbar_centers() {
        let lo = cx.saturating_sub(hw);
        let hi = (cx + hw).min(s - 1);
        for y in 0..s {
            for x in lo..=hi {
                img[[y, x]] *= 0.55;
            }
        }
    }
    img
}

/// Generate one defect-free cell, deterministic in `params.seed`.
pub fn generate_cell(params: &CellParams) -> Result<ImageSample> {
    params.validate()?;
    let template = cell_template(params);
    let mut rng = rng_for(params.seed, "synthcell/grain");
    let noisy = template.mapv(|v| {
        let grain = 1.0 + params.grain_noise_scale * sample_standard_normal(&mut rng);
        (v * grain).clamp(0.0, 1.0)
    });
    let image = noisy.mapv(|v| (v * 255.0).round() as u8);
    let id = format!("cell{:016x}", params.seed);
    Ok(ImageSample::defect_free(id, image, Provenance::Synthetic))
}

/// Boolean region for one defect class.
fn defect_region(params: &CellParams, spec: &DefectSpec) -> Array2<bool> {
    let s = params.size;
    let mut rng = rng_for(spec.geometry_seed, "synthcell/defect");
    let sf = s as f32;
    let mut region = Array2::from_elem((s, s), false);
    match spec.class {
        DefectClass::Crack => {
            // wide polyline wandering across the cell
            let thickness = (sf / 16.0).max(2.0);
            let mut x = rng.gen_range(0.1 * sf..0.4 * sf);
            let mut y = rng.gen_range(0.1 * sf..0.9 * sf);
            let segments = rng.gen_range(3..=5);
            for _ in 0..segments {
                let nx = (x + rng.gen_range(0.15 * sf..0.35 * sf)).min(sf - 2.0);
                let ny = (y + rng.gen_range(-0.3 * sf..0.3 * sf)).clamp(1.0, sf - 2.0);
                draw::thick_segment(&mut region, (y, x), (ny, nx), thickness / 2.0);
                x = nx;
                y = ny;
            }
        }
        DefectClass::Microcrack => {
            // thin short curve; stamped densely so it stays one component
            let len = sf / 6.0;
            let x0 = rng.gen_range(0.2 * sf..0.7 * sf);
            let y0 = rng.gen_range(0.2 * sf..0.7 * sf);
            let angle = rng.gen_range(0.0..std::f32::consts::PI);
            let bend = rng.gen_range(-0.8f32..0.8);
            draw::thin_curve(&mut region, (y0, x0), angle, bend, len);
        }
        DefectClass::FingerInterruption => {
            // a common gap across three or more adjacent fingers
            let rows = params.finger_rows();
            let group = rng.gen_range(3..=5.min(rows.len()));
            let first = rng.gen_range(0..rows.len().saturating_sub(group).max(1));
            let gap_w = (sf / 5.0) as usize;
            let x0 = rng.gen_range(0..s.saturating_sub(gap_w).max(1));
            for &fy in rows.iter().skip(first).take(group) {
                for y in fy.saturating_sub(1)..=(fy + 1).min(s - 1) {
                    for x in x0..(x0 + gap_w).min(s) {
                        region[[y, x]] = true;
                    }
                }
            }
        }
        DefectClass::Break => {
            // dark wedge cut off one corner
            let leg = rng.gen_range(0.25 * sf..0.4 * sf);
            let corner = rng.gen_range(0..4u8);
            draw::corner_wedge(&mut region, corner, leg);
        }
        DefectClass::BadSoldering => {
            // blotch hugging a busbar
            let centers = params.busbar_centers();
            let cx = if centers.is_empty() {
                s / 2
            } else {
                centers[rng.gen_range(0..centers.len())]
            };
            let cy = rng.gen_range(0.2 * sf..0.8 * sf) as usize;
            let rx = sf / 14.0;
            let ry = sf / 9.0;
            draw::ellipse(&mut region, (cy as f32, cx as f32), (ry, rx));
        }
    }
    region
}

/// Darken one defect region and record the exact changed-pixel mask.
///
/// Defects compose: the new mask is unioned with any existing one and the
/// class is added to the sample's class set.
pub fn inject_defect(
    params: &CellParams,
    sample: &ImageSample,
    spec: &DefectSpec,
) -> Result<ImageSample> {
    spec.validate()?;
    let region = defect_region(params, spec);
    let keep = 1.0 - spec.intensity_drop;
    let mut out = sample.clone();
    let mut mask = out.mask.take().unwrap_or_else(|| Array2::zeros(out.image.dim()));
    for ((pos, px), &hit) in out.image.indexed_iter_mut().zip(region.iter()) {
        if !hit {
            continue;
        }
        let new = (f32::from(*px) * keep).round() as u8;
        if new != *px {
            *px = new;
            mask[pos] = 1;
        }
    }
    out.mask = Some(mask);
    out.classes.insert(spec.class);
    out.validate()?;
    Ok(out)
}

/// Benchmark composition: sizes, counts, class mix, master seed.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkConfig {
    pub size: usize,
    pub n_defect_free: usize,
    pub n_defective: usize,
    /// Explicit (crack, microcrack, finger) counts; defaults to the
    /// reference 18:240:117 mix scaled to `n_defective`.
    pub class_counts: Option<[usize; 3]>,
    pub intensity_drop: f32,
    pub master_seed: u64,
    pub busbar_count: usize,
    pub finger_spacing: usize,
    pub grain_noise_scale: f32,
    pub base_intensity: f32,
}

impl BenchmarkConfig {
    /// Desk-scale default: 400 defect-free + 100 defective at 64x64.
    pub fn desk_64(master_seed: u64) -> Self {
        Self {
            size: 64,
            n_defect_free: 400,
            n_defective: 100,
            class_counts: None,
            intensity_drop: 0.6,
            master_seed,
            busbar_count: 2,
            finger_spacing: 4,
            grain_noise_scale: 0.05,
            base_intensity: 0.75,
        }
    }

    /// Desk-scale default at 256x256: 200 defect-free + 50 defective.
    pub fn desk_256(master_seed: u64) -> Self {
        Self { size: 256, n_defect_free: 200, n_defective: 50, ..Self::desk_64(master_seed) }
    }

    fn cell_params(&self, seed: u64) -> CellParams {
        CellParams {
            size: self.size,
            busbar_count: self.busbar_count,
            finger_spacing: self.finger_spacing,
            grain_noise_scale: self.grain_noise_scale,
            base_intensity: self.base_intensity,
            seed,
        }
    }

    /// Per-class defective counts at the reference 18:240:117 mix.
    pub fn resolved_class_counts(&self) -> [usize; 3] {
        if let Some(c) = self.class_counts {
            return c;
        }
        scale_mix(self.n_defective, [18.0, 240.0, 117.0])
    }
}

/// Largest-remainder scaling of a reference mix to `total`.
fn scale_mix(total: usize, weights: [f64; 3]) -> [usize; 3] {
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Generate the full benchmark dataset under `out_dir` and return its
/// manifest (no split assignment yet).
pub fn build_benchmark(config: &BenchmarkConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if config.n_defect_free + config.n_defective == 0 {
        return Err(Error::Config("benchmark would contain zero samples".into()));
    }
    config.cell_params(0).validate()?;
    let [n_crack, n_micro, n_finger] = if config.n_defective > 0 {
        config.resolved_class_counts()
    } else {
        [0, 0, 0]
    };
    if n_crack + n_micro + n_finger != config.n_defective {
        return Err(Error::Config(format!(
            "class counts {:?} do not sum to n_defective {}",
            [n_crack, n_micro, n_finger],
            config.n_defective
        )));
    }

    let mut plan: Vec<(String, Option<DefectClass>)> = Vec::new();
    for i in 0..config.n_defect_free {
        plan.push((format!("free{i:04}"), None));
    }
    let classes = [
        (DefectClass::Crack, "crack", n_crack),
        (DefectClass::Microcrack, "micro", n_micro),
        (DefectClass::FingerInterruption, "finger", n_finger),
    ];
    for (class, tag, count) in classes {
        for i in 0..count {
            plan.push((format!("{tag}{i:04}"), Some(class)));
        }
    }

    let samples: Vec<Result<ImageSample>> = plan
        .par_iter()
        .map(|(id, class)| {
            let cell_seed = derive_seed(config.master_seed, &format!("synth/cell/{id}"));
            let params = config.cell_params(cell_seed);
            let mut sample = generate_cell(&params)?;
            sample.id = id.clone();
            if let Some(class) = class {
                let spec = DefectSpec {
                    class: *class,
                    intensity_drop: config.intensity_drop,
                    geometry_seed: derive_seed(config.master_seed, &format!("synth/defect/{id}")),
                };
                sample = inject_defect(&params, &sample, &spec)?;
                if sample.mask.as_ref().map(|m| mask_pixel_count(m)) == Some(0) {
                    return Err(Error::Data(format!("defect injection left '{id}' unchanged")));
                }
            }
            Ok(sample)
        })
        .collect();

    let mut manifest = DatasetManifest::new(config.master_seed);
    for s in samples {
        manifest.add_sample(out_dir, &s?)?;
    }
    manifest.validate()?;
    Ok(manifest)
}
