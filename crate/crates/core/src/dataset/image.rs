use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{DatasetError, FaceSample, ImageRef};

/// Single-channel image with intensities on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// ITU-R 601 luma.
fn luminance(r: u8, g: u8, b: u8) -> f32 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32
}

impl GrayImage {
    /// # Panics
    /// If `data.len() != width * height` or either side is zero.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert!(width > 0 && height > 0 && data.len() == width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_rgb(width: usize, height: usize, rgb: &[u8]) -> Self {
        let data = rgb
            .chunks_exact(3)
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at a continuous position (pixel centres at `i + 0.5`).
    /// Positions outside the image replicate the nearest edge.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let top = self.get(x0, y0) as f64 * (1.0 - tx) + self.get(x1, y0) as f64 * tx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - tx) + self.get(x1, y1) as f64 * tx;
        (top * (1.0 - ty) + bottom * ty) as f32
    }

    /// Saves as 8-bit grayscale (values rounded and clamped).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        ::image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches")
            .save(path)
            .map_err(|source| DatasetError::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

pub fn load_gray_image(path: impl AsRef<Path>) -> Result<GrayImage, DatasetError> {
    let path = path.as_ref();
    let img = ::image::open(path).map_err(|source| match source {
        ::image::ImageError::IoError(e) => DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        source => DatasetError::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        ::image::DynamicImage::ImageLuma8(g) => {
            GrayImage::new(w, h, g.into_raw().into_iter().map(f32::from).collect())
        }
        other => GrayImage::from_rgb(w, h, other.to_rgb8().as_raw()),
    })
}

/// Decoded images shared across samples and threads.
#[derive(Debug, Default)]
pub struct ImageCache {
    images: Mutex<HashMap<PathBuf, Arc<GrayImage>>>,
}

impl ImageCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, image: &ImageRef) -> Result<Arc<GrayImage>, DatasetError> {
        match image {
            ImageRef::Memory(img) => Ok(Arc::clone(img)),
            ImageRef::Path(path) => {
                if let Some(img) = self.images.lock().unwrap().get(path) {
                    return Ok(Arc::clone(img));
                }
                let img = Arc::new(load_gray_image(path)?);
                self.images
                    .lock()
                    .unwrap()
                    .insert(path.clone(), Arc::clone(&img));
                Ok(img)
            }
        }
    }

    pub fn for_sample(&self, sample: &FaceSample) -> Result<Arc<GrayImage>, DatasetError> {
        self.get(&sample.image)
    }
}
