use crate::geometry::{Affine2, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateFrame {
    /// `[0, 1]` relative to a crop box.
    CropUnit,
    /// Pixels of the image (or augmented image frame) the sample lives in.
    ImagePixels,
}

/// Ordered landmark points tagged with their coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    frame: CoordinateFrame,
}

impl LandmarkSet {
    /// # Panics
    /// If `points` is empty.
    pub fn new(points: Vec<Point>, frame: CoordinateFrame) -> Self {
        assert!(
            !points.is_empty(),
            "a landmark set needs at least one point"
        );
        Self { points, frame }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame(&self) -> CoordinateFrame {
        self.frame
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    /// Maps every point through `t`, relabelling the frame.
    pub fn transformed(&self, t: &Affine2, frame: CoordinateFrame) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
            frame,
        }
    }

    /// Interleaved `(x1, y1, x2, y2, ...)`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// # Panics
    /// If `flat` has odd or zero length.
    pub fn from_flat(flat: &[f64], frame: CoordinateFrame) -> LandmarkSet {
        assert!(flat.len() >= 2 && flat.len().is_multiple_of(2));
        LandmarkSet::new(
            flat.chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
            frame,
        )
    }
}
