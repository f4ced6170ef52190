//! Pixel-level primitives: [-1,1] normalization, resizing, PNG I/O.

use std::path::Path;

use image::{imageops, GrayImage, ImageReader};
use ndarray::{Array2, ArrayD};

use crate::error::{Error, Result};

/// 2-D real image with every value in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    data: Array2<f32>,
}

impl NormalizedImage {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::Domain("normalized image outside [-1, 1]".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Map 8-bit intensities to [-1, 1]: `v -> v/127.5 - 1`.
///
/// Rejects anything that is not a 2-D array.
pub fn normalize(image: &ArrayD<u8>) -> Result<NormalizedImage> {
    if image.ndim() != 2 {
        return Err(Error::Shape(format!(
            "normalize expects a 2-D image, got {} dims",
            image.ndim()
        )));
    }
    let shape = (image.shape()[0], image.shape()[1]);
    let data = Array2::from_shape_fn(shape, |(y, x)| {
        f32::from(image[[y, x]]) / 127.5 - 1.0
    });
    NormalizedImage::new(data)
}

pub fn normalize_2d(image: &Array2<u8>) -> NormalizedImage {
    normalize(&image.clone().into_dyn()).expect("2-D by construction")
}

/// Inverse of [`normalize`] up to rounding: `v -> round((v+1) * 127.5)`.
pub fn denormalize(image: &NormalizedImage) -> Array2<u8> {
    image.data().mapv(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
}

fn to_gray(image: &Array2<u8>) -> GrayImage {
    let (h, w) = image.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([image[[y as usize, x as usize]]])
    })
}

fn from_gray(img: &GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0]
    })
}

/// Bilinear resize to a square side.
pub fn resize_image(image: &Array2<u8>, side: usize) -> Array2<u8> {
    if image.dim() == (side, side) {
        return image.clone();
    }
    let resized = imageops::resize(
        &to_gray(image),
        side as u32,
        side as u32,
        imageops::FilterType::Triangle,
    );
    from_gray(&resized)
}

/// Nearest-neighbour resize; keeps {0,1} masks binary.
pub fn resize_mask(mask: &Array2<u8>, side: usize) -> Array2<u8> {
    if mask.dim() == (side, side) {
        return mask.clone();
    }
    let resized = imageops::resize(
        &to_gray(mask),
        side as u32,
        side as u32,
        imageops::FilterType::Nearest,
    );
    from_gray(&resized)
}

pub fn save_gray_png(path: &Path, image: &Array2<u8>) -> Result<()> {
    to_gray(image).save(path).map_err(|e| Error::Image { path: path.into(), source: e })
}

pub fn load_gray_png(path: &Path) -> Result<Array2<u8>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.into(), source: e })?;
    Ok(from_gray(&img.into_luma8()))
}

/// Masks are stored as 0/255 PNGs for visibility.
pub fn save_mask_png(path: &Path, mask: &Array2<u8>) -> Result<()> {
    save_gray_png(path, &mask.mapv(|v| if v > 0 { 255 } else { 0 }))
}

pub fn load_mask_png(path: &Path) -> Result<Array2<u8>> {
    Ok(load_gray_png(path)?.mapv(|v| u8::from(v > 127)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let img = arr2(&[[0u8, 255], [127, 128]]);
        let n = normalize_2d(&img);
        let d = n.data();
        assert_eq!(d[[0, 0]], -1.0);
        assert_eq!(d[[0, 1]], 1.0);
        // the 127/128 bracket straddles zero within 1/127.5
        assert!(d[[1, 0]].abs() <= 1.0 / 127.5);
        assert!(d[[1, 1]].abs() <= 1.0 / 127.5);
    }

    #[test]
    fn normalize_rejects_non_2d() {
        let bad = ndarray::ArrayD::<u8>::zeros(ndarray::IxDyn(&[2, 2, 2]));
        assert!(matches!(normalize(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn roundtrip_exact_for_all_u8() {
        let vals: Vec<u8> = (0..=255).collect();
        let img = Array2::from_shape_vec((16, 16), vals).unwrap();
        let back = denormalize(&normalize_2d(&img));
        assert_eq!(back, img);
    }

    #[test]
    fn normalized_image_rejects_out_of_range() {
        assert!(NormalizedImage::new(arr2(&[[1.5f32]])).is_err());
        assert!(NormalizedImage::new(arr2(&[[-1.0f32, 1.0]])).is_ok());
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = arr2(&[[0u8, 1], [1, 0]]);
        save_mask_png(&path, &mask).unwrap();
        assert_eq!(load_mask_png(&path).unwrap(), mask);
    }

    #[test]
    fn resize_mask_stays_binary() {
        let mask = Array2::from_shape_fn((10, 10), |(y, x)| u8::from(y > 4 && x > 4));
        let resized = resize_mask(&mask, 7);
        assert!(resized.iter().all(|&v| v <= 1));
        assert!(resized.iter().any(|&v| v == 1));
    }
}
