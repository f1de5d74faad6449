//! Normalized network inputs: crop, resample, subtract the mean.

use super::{DatasetError, FaceSample, GrayImage, ImageCache};
use crate::geometry::{Affine2, BBox, Point};
use crate::landmarks::{CoordinateFrame, LandmarkSet};
use crate::tensor::Tensor;

/// A `[1, side, side]` crop with its own mean removed. Intensities are scaled
/// to `[0, 1]` before the mean is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedInput {
    pub pixels: Tensor,
    pub subtracted_mean: f64,
    /// Crop-unit square onto pixels of the stored image.
    pub crop_transform: Affine2,
    /// Crop-unit square onto the sample's own frame (the frame its landmarks
    /// and box are expressed in). Equal to `crop_transform` for samples
    /// without a warp.
    pub sample_transform: Affine2,
}

impl NormalizedInput {
    /// Landmarks of the sample, in crop-unit coordinates.
    pub fn targets(&self, landmarks: &LandmarkSet) -> LandmarkSet {
        to_crop_frame(landmarks, &self.sample_transform)
    }
}

/// Crops `bbox` (given in the sample's frame) out of `image`, resamples it
/// bilinearly to `side x side` and subtracts the mean. Areas outside the image
/// replicate the nearest edge pixel.
pub fn load_gray_crop(
    image: &GrayImage,
    sample: &FaceSample,
    bbox: &BBox,
    side: usize,
) -> Result<NormalizedInput, DatasetError> {
    if !bbox.is_valid() || side == 0 {
        return Err(DatasetError::InvalidBox(*bbox));
    }
    let sample_transform = Affine2::unit_to_box(bbox);
    let crop_transform = sample.warp.then_after(&sample_transform);
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        .map(|(x, y)| crop_transform.apply(Point::new(x, y)));
    let footprint = BBox::enclosing(&corners).expect("four corners");
    if !footprint.intersects_frame(image.width() as f64, image.height() as f64) {
        return Err(DatasetError::EmptyCrop {
            bbox: *bbox,
            width: image.width(),
            height: image.height(),
        });
    }

    let inv_side = 1.0 / side as f64;
    let mut values = Vec::with_capacity(side * side);
    for v in 0..side {
        for u in 0..side {
            let unit = Point::new((u as f64 + 0.5) * inv_side, (v as f64 + 0.5) * inv_side);
            let q = crop_transform.apply(unit);
            values.push(image.sample_bilinear(q.x, q.y) as f64 / 255.0);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let data = values.iter().map(|v| (v - mean) as f32).collect();
    Ok(NormalizedInput {
        pixels: Tensor::new([1, side, side], data).expect("side*side values"),
        subtracted_mean: mean,
        crop_transform,
        sample_transform,
    })
}

/// The network input for a sample: its own box, read through `cache`.
pub fn canonical_crop(
    cache: &ImageCache,
    sample: &FaceSample,
    side: usize,
) -> Result<NormalizedInput, DatasetError> {
    let image = cache.for_sample(sample)?;
    load_gray_crop(&image, sample, &sample.bbox, side)
}

/// Maps points through `crop_transform⁻¹`, so points inside the crop land in `[0, 1]`.
///
/// # Panics
/// If `crop_transform` is singular.
pub fn to_crop_frame(landmarks: &LandmarkSet, crop_transform: &Affine2) -> LandmarkSet {
    let inv = crop_transform
        .inverse()
        .expect("crop transform must be invertible");
    landmarks.transformed(&inv, CoordinateFrame::CropUnit)
}

pub fn from_crop_frame(landmarks: &LandmarkSet, crop_transform: &Affine2) -> LandmarkSet {
    landmarks.transformed(crop_transform, CoordinateFrame::ImagePixels)
}

/// Renders the sample's own frame, pixels `[0, width) x [0, height)`, at raw
/// intensities. Used to inspect augmented samples.
pub fn render_sample(
    image: &GrayImage,
    sample: &FaceSample,
    width: usize,
    height: usize,
) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        let q = sample
            .warp
            .apply(Point::new(x as f64 + 0.5, y as f64 + 0.5));
        image.sample_bilinear(q.x, q.y)
    })
}

/// Box enclosing the landmarks, grown on every side by `margin` times its
/// width (horizontally) and height (vertically). Fallback when no detector
/// box is available.
pub fn tight_box(landmarks: &LandmarkSet, margin: f64) -> BBox {
    let b = BBox::enclosing(landmarks.points()).expect("landmark sets are non-empty");
    // Degenerate extents (all points on a line) still get a positive size.
    let w = b.w.max(1.0);
    let h = b.h.max(1.0);
    let (mx, my) = (margin * w, margin * h);
    BBox::new(
        b.x - mx - (w - b.w) / 2.0,
        b.y - my - (h - b.h) / 2.0,
        w + 2.0 * mx,
        h + 2.0 * my,
    )
}
