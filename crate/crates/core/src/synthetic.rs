//! Synthetic five-point faces with analytically known landmarks, for tests,
//! benchmarks and smoke runs.
//!
//! Landmarks: left eye, right eye, nose tip, left mouth corner, right mouth
//! corner. Each is drawn as a Gaussian blob of its own brightness on a smooth
//! background, so every landmark is visible in the pixels.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    write_manifest, DatasetError, DatasetManifest, FaceSample, GrayImage, ImageRef, LandmarkSource,
    ManifestEntry, SampleMeta,
};
use crate::geometry::{Affine2, BBox, Point};
use crate::landmarks::{CoordinateFrame, LandmarkSet};

pub const N_LANDMARKS: usize = 5;
pub const LEFT_EYE: usize = 0;
pub const RIGHT_EYE: usize = 1;
pub const MIRROR_PERM: [usize; N_LANDMARKS] = [1, 0, 2, 4, 3];

const TEMPLATE: [(f64, f64); N_LANDMARKS] = [
    (0.32, 0.36),
    (0.68, 0.36),
    (0.5, 0.56),
    (0.36, 0.74),
    (0.64, 0.74),
];
const BRIGHTNESS: [f32; N_LANDMARKS] = [230.0, 200.0, 170.0, 140.0, 110.0];

/// Face geometry drawn inside a `side x side` image whose box is the whole
/// image.
pub fn face_landmarks(rng: &mut impl Rng, side: usize) -> Vec<Point> {
    let s = side as f64;
    let scale = rng.gen_range(0.8..1.05);
    let angle = rng.gen_range(-12.0..12.0);
    let shift = Point::new(
        rng.gen_range(-0.05..0.05) * s,
        rng.gen_range(-0.05..0.05) * s,
    );
    let centre = Point::new(s / 2.0, s / 2.0);
    let place = Affine2::rotation_about(centre, angle)
        .then_after(&Affine2::scale_about(centre, scale, scale));
    TEMPLATE
        .iter()
        .map(|&(x, y)| {
            let jitter = Point::new(
                rng.gen_range(-0.02..0.02) * s,
                rng.gen_range(-0.02..0.02) * s,
            );
            let p = place.apply(Point::new(x * s + jitter.x, y * s + jitter.y));
            Point::new(p.x + shift.x, p.y + shift.y)
        })
        .collect()
}

/// Renders blobs of width `sigma` pixels at `points` over a soft gradient.
pub fn render_face(width: usize, height: usize, points: &[Point], sigma: f64) -> GrayImage {
    let inv = 1.0 / (2.0 * sigma * sigma);
    GrayImage::from_fn(width, height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = 30.0 + 20.0 * py / height as f64;
        for (p, &b) in points.iter().zip(BRIGHTNESS.iter().cycle()) {
            let d2 = (px - p.x).powi(2) + (py - p.y).powi(2);
            v += (b as f64) * (-d2 * inv).exp();
        }
        v.min(255.0) as f32
    })
}

/// `n` in-memory faces, `side x side`, boxes covering the full image.
pub fn faces(n: usize, side: usize, seed: u64) -> Vec<FaceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let points = face_landmarks(&mut rng, side);
            let image = render_face(side, side, &points, side as f64 / 32.0);
            FaceSample {
                image: ImageRef::Memory(Arc::new(image)),
                bbox: BBox::new(0.0, 0.0, side as f64, side as f64),
                landmarks: LandmarkSet::new(points, CoordinateFrame::ImagePixels),
                warp: Affine2::IDENTITY,
                meta: SampleMeta {
                    id: format!("face{i:04}"),
                    source: format!("face{i:04}"),
                },
            }
        })
        .collect()
}

pub fn empty_manifest() -> DatasetManifest {
    DatasetManifest::new(N_LANDMARKS, LEFT_EYE, RIGHT_EYE, MIRROR_PERM.to_vec())
}

/// Saves in-memory faces as PNG files under `dir` and writes a manifest with
/// inline landmarks. Images are stored once per distinct id.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    samples: &[FaceSample],
) -> Result<PathBuf, DatasetError> {
    let mut manifest = empty_manifest();
    manifest.base_dir = dir.to_path_buf();
    for s in samples {
        let file = format!("{}.png", s.meta.id);
        if let ImageRef::Memory(img) = &s.image {
            img.save(dir.join(&file))?;
        }
        manifest.entries.push(ManifestEntry {
            id: s.meta.id.clone(),
            image_path: file.into(),
            bbox: s.bbox,
            landmarks: LandmarkSource::Inline(s.landmarks.points().to_vec()),
            tags: Vec::new(),
        });
    }
    let path = dir.join(name);
    write_manifest(&path, &manifest)?;
    Ok(path)
}
