//! Non-overlapping patch tiling: a `grid`x`grid` partition of a square
//! image into `patch`-sized tiles, row-major, stride equal to patch size.

use ndarray::{s, Array2};

use super::NormalizedImage;
use crate::error::{Error, Result};

/// Split into `grid * grid` patches of side `patch`, row-major.
pub fn extract_patches(
    image: &NormalizedImage,
    patch: usize,
    grid: usize,
) -> Result<Vec<NormalizedImage>> {
    let (h, w) = image.shape();
    if h != grid * patch || w != grid * patch {
        return Err(Error::Config(format!(
            "image {h}x{w} does not tile into a {grid}x{grid} grid of {patch}x{patch} patches"
        )));
    }
    let data = image.data();
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let tile = data
                .slice(s![gy * patch..(gy + 1) * patch, gx * patch..(gx + 1) * patch])
                .to_owned();
            out.push(NormalizedImage::new(tile).expect("tile of a normalized image"));
        }
    }
    Ok(out)
}

/// Inverse of [`extract_patches`]: stitch row-major tiles back together.
pub fn reassemble_patches(patches: &[NormalizedImage], grid: usize) -> Result<NormalizedImage> {
    if patches.len() != grid * grid {
        return Err(Error::Config(format!(
            "expected {} patches for a {grid}x{grid} grid, got {}",
            grid * grid,
            patches.len()
        )));
    }
    let (ph, pw) = patches[0].shape();
    if ph != pw {
        return Err(Error::Shape("patches must be square".into()));
    }
    let mut out = Array2::<f32>::zeros((grid * ph, grid * ph));
    for (i, p) in patches.iter().enumerate() {
        if p.shape() != (ph, pw) {
            return Err(Error::Shape("patches differ in shape".into()));
        }
        let (gy, gx) = (i / grid, i % grid);
        out.slice_mut(s![gy * ph..(gy + 1) * ph, gx * ph..(gx + 1) * ph])
            .assign(p.data());
    }
    NormalizedImage::new(out)
}
