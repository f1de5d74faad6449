//! Annotations, manifests, grayscale images and normalized network inputs.

mod crop;
mod image;
mod manifest;
mod pts;

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{Affine2, BBox};
use crate::landmarks::LandmarkSet;

pub use self::image::{load_gray_image, GrayImage, ImageCache};
pub use crop::{
    canonical_crop, from_crop_frame, load_gray_crop, render_sample, tight_box, to_crop_frame,
    NormalizedInput,
};
pub use manifest::{
    read_manifest, read_manifest_lenient, write_manifest, DatasetManifest, LandmarkSource,
    ManifestEntry, ManifestWarning,
};
pub use pts::{parse_pts, parse_pts_str, write_pts};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {kind}")]
    Pts {
        path: PathBuf,
        line: usize,
        kind: PtsErrorKind,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("entry {entry:?}: missing file {path}")]
    MissingFile { entry: String, path: PathBuf },
    #[error("entry {entry:?}: {found} landmarks, manifest declares {expected}")]
    LandmarkCount {
        entry: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: cannot decode image: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
    #[error("crop box {bbox} does not overlap the {width}x{height} image")]
    EmptyCrop {
        bbox: BBox,
        width: usize,
        height: usize,
    },
    #[error("invalid bounding box {0}")]
    InvalidBox(BBox),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtsErrorKind {
    MalformedHeader,
    MissingBrace,
    BadCoordinate,
    CountMismatch { declared: usize, found: usize },
}

impl std::fmt::Display for PtsErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PtsErrorKind::MalformedHeader => write!(f, "malformed header"),
            PtsErrorKind::MissingBrace => write!(f, "expected '{{' or '}}'"),
            PtsErrorKind::BadCoordinate => write!(f, "non-numeric coordinate"),
            PtsErrorKind::CountMismatch { declared, found } => {
                write!(f, "n_points declares {declared} but {found} points follow")
            }
        }
    }
}

/// Where a sample's pixels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef {
    Path(PathBuf),
    Memory(Arc<GrayImage>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleMeta {
    pub id: String,
    /// Id of the original annotated sample this one derives from.
    pub source: String,
}

/// A face: image reference, box, landmarks (pixels of the sample frame) and
/// the warp from the sample frame into the stored image.
///
/// Original samples have an identity warp. Augmented samples keep pointing at
/// the original image; rotation, stretching and mirroring only change the
/// landmarks and the warp, and pixels are resampled when a crop is rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub image: ImageRef,
    pub bbox: BBox,
    pub landmarks: LandmarkSet,
    pub warp: Affine2,
    pub meta: SampleMeta,
}
