//! Three-stage geometric augmentation: box expansion scaled by the
//! inter-pupil distance, rotation grids, stretching, mirroring, the
//! containment discard rule and hard-example selection.
//!
//! Transforms never touch pixels. They update the landmarks and compose the
//! sample's warp, and pixels are resampled once when a crop is rendered.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest, FaceSample, ManifestEntry, SampleMeta};
use crate::eval::{evaluate_model, EvalError};
use crate::geometry::{Affine2, BBox};
use crate::landmarks::LandmarkSet;
use crate::model::WeightStore;
use crate::par;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("sample {0:?}: eye points coincide")]
    CoincidentEyes(String),
    #[error("eye index {index} out of range for {len} landmarks")]
    EyeIndex { index: usize, len: usize },
    #[error("mirror permutation has {actual} entries, sample has {expected} landmarks")]
    PermutationLength { expected: usize, actual: usize },
    #[error("stage 3 needs a trained model")]
    MissingModel,
    #[error("model predicts {model} landmarks, manifest has {manifest}")]
    LandmarkMismatch { model: usize, manifest: usize },
    #[error("sample {0:?} has an in-memory image and cannot be written to a manifest")]
    InMemoryImage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    S1,
    S2,
    S3,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::S1 => "s1",
            Stage::S2 => "s2",
            Stage::S3 => "s3",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(Stage::S1),
            "s2" | "2" => Ok(Stage::S2),
            "s3" | "3" => Ok(Stage::S3),
            _ => Err(format!("unknown stage {s:?} (expected s1, s2 or s3)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentStageConfig {
    pub stage: Stage,
    /// Expansion ratio bounds, in units of the inter-pupil distance.
    pub expand_ratio_range: (f64, f64),
    pub angle_range_deg: (i32, i32),
    pub angle_step_deg: u32,
    pub mirror: bool,
    /// Extra `(sx, sy)` variants emitted next to the unstretched sample.
    pub stretch_factors: Vec<(f64, f64)>,
    pub hard_threshold: Option<f64>,
    pub rng_seed: u64,
}

impl AugmentStageConfig {
    /// Stage defaults. Each stage gets its own seed so stages draw different
    /// expansion ratios from the same sources.
    pub fn defaults(stage: Stage) -> Self {
        match stage {
            Stage::S1 => Self {
                stage,
                expand_ratio_range: (0.1, 0.5),
                angle_range_deg: (-50, 50),
                angle_step_deg: 3,
                mirror: true,
                stretch_factors: Vec::new(),
                hard_threshold: None,
                rng_seed: 1,
            },
            Stage::S2 => Self {
                stage,
                expand_ratio_range: (0.1, 0.3),
                angle_range_deg: (-20, 20),
                angle_step_deg: 5,
                mirror: true,
                stretch_factors: vec![(0.85, 1.0), (1.0, 0.85), (1.15, 1.0), (1.0, 1.15)],
                hard_threshold: None,
                rng_seed: 2,
            },
            Stage::S3 => Self {
                stage,
                expand_ratio_range: (0.1, 0.3),
                angle_range_deg: (-10, 10),
                angle_step_deg: 2,
                mirror: true,
                stretch_factors: Vec::new(),
                hard_threshold: Some(0.02),
                rng_seed: 3,
            },
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: &str| Err(AugmentError::Config(m.to_string()));
        let (lo, hi) = self.expand_ratio_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return bad("expand ratio range must satisfy 0 <= lo <= hi");
        }
        if self.angle_range_deg.0 > self.angle_range_deg.1 {
            return bad("angle range must satisfy lo <= hi");
        }
        if self.angle_step_deg == 0 {
            return bad("angle step must be >= 1");
        }
        if self
            .stretch_factors
            .iter()
            .any(|&(sx, sy)| !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()))
        {
            return bad("stretch factors must be positive");
        }
        if self.stage == Stage::S3 && self.hard_threshold.is_none() {
            return bad("stage 3 requires a hard-example threshold");
        }
        Ok(())
    }

    /// `lo, lo + step, ...` up to and including `hi` when it falls on the grid.
    pub fn angles(&self) -> Vec<i32> {
        let (lo, hi) = self.angle_range_deg;
        (lo..=hi).step_by(self.angle_step_deg as usize).collect()
    }

    /// The unstretched case first, then the configured variants.
    pub fn stretch_variants(&self) -> Vec<(f64, f64)> {
        let mut v = vec![(1.0, 1.0)];
        v.extend(self.stretch_factors.iter().copied());
        v
    }
}

pub fn inter_pupil_distance(
    landmarks: &LandmarkSet,
    left: usize,
    right: usize,
) -> Result<f64, AugmentError> {
    let pts = landmarks.points();
    for index in [left, right] {
        if index >= pts.len() {
            return Err(AugmentError::EyeIndex {
                index,
                len: pts.len(),
            });
        }
    }
    let d = pts[left].distance(pts[right]);
    if d == 0.0 {
        return Err(AugmentError::CoincidentEyes(String::new()));
    }
    Ok(d)
}

/// Grows every side by `ratio * ipd` about the box centre.
pub fn expand_box(bbox: &BBox, ratio: f64, ipd: f64) -> BBox {
    let m = ratio * ipd;
    BBox::new(bbox.x - m, bbox.y - m, bbox.w + 2.0 * m, bbox.h + 2.0 * m)
}

/// Applies `t` to the sample's content: landmarks move forward through `t`
/// and the warp picks up `t⁻¹`. The box is kept.
fn transform_content(sample: &FaceSample, t: &Affine2) -> FaceSample {
    let inv = t.inverse().expect("augmentation transforms are invertible");
    FaceSample {
        landmarks: sample.landmarks.transformed(t, sample.landmarks.frame()),
        warp: sample.warp.then_after(&inv),
        ..sample.clone()
    }
}

/// Rotates content and landmarks by `angle_deg` about the box centre.
pub fn rotate_sample(sample: &FaceSample, angle_deg: f64) -> FaceSample {
    if angle_deg == 0.0 {
        return sample.clone();
    }
    transform_content(
        sample,
        &Affine2::rotation_about(sample.bbox.center(), angle_deg),
    )
}

/// Scales content and landmarks by `(sx, sy)` about the box centre.
pub fn stretch_sample(sample: &FaceSample, sx: f64, sy: f64) -> FaceSample {
    if sx == 1.0 && sy == 1.0 {
        return sample.clone();
    }
    transform_content(sample, &Affine2::scale_about(sample.bbox.center(), sx, sy))
}

/// Horizontal flip about the box centre. Landmark `j` of the result is the
/// flipped landmark `perm[j]` of the input.
pub fn mirror_sample(sample: &FaceSample, perm: &[usize]) -> Result<FaceSample, AugmentError> {
    let n = sample.landmarks.len();
    if perm.len() != n {
        return Err(AugmentError::PermutationLength {
            expected: n,
            actual: perm.len(),
        });
    }
    if let Some(&bad) = perm.iter().find(|&&j| j >= n) {
        return Err(AugmentError::Config(format!(
            "mirror permutation index {bad} out of range"
        )));
    }
    let t = Affine2::mirror_x(sample.bbox.center().x);
    let flipped = transform_content(sample, &t);
    let points = perm
        .iter()
        .map(|&j| flipped.landmarks.points()[j])
        .collect();
    Ok(FaceSample {
        landmarks: LandmarkSet::new(points, sample.landmarks.frame()),
        ..flipped
    })
}

/// All landmarks strictly inside the box.
pub fn satisfies_containment(sample: &FaceSample) -> bool {
    sample
        .landmarks
        .points()
        .iter()
        .all(|&p| sample.bbox.contains_strict(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source_id: String,
    pub angle: i32,
    pub ratio: f64,
    pub stretch: (f64, f64),
    pub mirrored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub sample: FaceSample,
    pub provenance: Provenance,
}

/// Eye and mirror configuration shared by every sample of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct FaceLayout<'a> {
    pub left_eye: usize,
    pub right_eye: usize,
    pub mirror_perm: &'a [usize],
}

impl<'a> FaceLayout<'a> {
    pub fn of(manifest: &'a DatasetManifest) -> Self {
        Self {
            left_eye: manifest.left_eye,
            right_eye: manifest.right_eye,
            mirror_perm: &manifest.mirror_perm,
        }
    }
}

fn stretch_tag(index: usize) -> String {
    format!("x{index}")
}

/// Derived samples of one source, in grid order: angle, then stretch
/// variant, then unmirrored before mirrored.
pub fn augment_one(
    source: &FaceSample,
    index: usize,
    layout: FaceLayout<'_>,
    cfg: &AugmentStageConfig,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    let ipd = inter_pupil_distance(&source.landmarks, layout.left_eye, layout.right_eye).map_err(
        |e| match e {
            AugmentError::CoincidentEyes(_) => AugmentError::CoincidentEyes(source.meta.id.clone()),
            other => other,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(index as u64);
    let (lo, hi) = cfg.expand_ratio_range;
    let mut out = Vec::new();
    for angle in cfg.angles() {
        let ratio = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let expanded = FaceSample {
            bbox: expand_box(&source.bbox, ratio, ipd),
            ..source.clone()
        };
        let rotated = rotate_sample(&expanded, angle as f64);
        for (k, (sx, sy)) in cfg.stretch_variants().into_iter().enumerate() {
            let derived = stretch_sample(&rotated, sx, sy);
            if !satisfies_containment(&derived) {
                continue;
            }
            let base_id = format!(
                "{}:{}:a{angle}:{}",
                source.meta.id,
                cfg.stage,
                stretch_tag(k)
            );
            let mut variants = vec![(false, derived.clone())];
            if cfg.mirror {
                variants.push((true, mirror_sample(&derived, layout.mirror_perm)?));
            }
            for (mirrored, sample) in variants {
                out.push(AugmentedSample {
                    sample: FaceSample {
                        meta: SampleMeta {
                            id: format!("{base_id}:m{}", mirrored as u8),
                            source: source.meta.id.clone(),
                        },
                        ..sample
                    },
                    provenance: Provenance {
                        source_id: source.meta.id.clone(),
                        angle,
                        ratio,
                        stretch: (sx, sy),
                        mirrored,
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Augments every source. Sources may be processed in parallel; the result
/// is in source order either way. Source `i` draws its ratios from stream
/// `i` of the seeded generator.
pub fn augment_samples(
    sources: &[FaceSample],
    layout: FaceLayout<'_>,
    cfg: &AugmentStageConfig,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    cfg.validate()?;
    let per_source =
        par::try_map_indexed(sources.len(), |i| augment_one(&sources[i], i, layout, cfg))?;
    Ok(per_source.into_iter().flatten().collect())
}

/// Manifest entries whose canonical-crop error under `model` exceeds `threshold`.
pub fn select_hard_examples(
    model: &WeightStore,
    manifest: &DatasetManifest,
    threshold: f64,
) -> Result<DatasetManifest, AugmentError> {
    if model.spec().n_landmarks != manifest.n_landmarks {
        return Err(AugmentError::LandmarkMismatch {
            model: model.spec().n_landmarks,
            manifest: manifest.n_landmarks,
        });
    }
    let mut subset = manifest.with_same_header();
    if manifest.entries.is_empty() {
        return Ok(subset);
    }
    let report = evaluate_model(model, manifest)?;
    subset.entries = manifest
        .entries
        .iter()
        .zip(&report.per_image_errors)
        .filter(|(_, &e)| e > threshold)
        .map(|(entry, _)| entry.clone())
        .collect();
    Ok(subset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub manifest: DatasetManifest,
    pub provenance: Vec<(String, Provenance)>,
    pub warnings: Vec<String>,
}

impl StageOutput {
    pub fn provenance_tsv(&self) -> String {
        let mut s =
            String::from("sample_id\tsource_id\tangle\tratio\tstretch_x\tstretch_y\tmirrored\n");
        for (id, p) in &self.provenance {
            writeln!(
                s,
                "{id}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.source_id, p.angle, p.ratio, p.stretch.0, p.stretch.1, p.mirrored as u8
            )
            .unwrap();
        }
        s
    }

    /// Writes the manifest to `path` and the provenance log next to it as
    /// `<path>.provenance.tsv`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<PathBuf, AugmentError> {
        let path = path.as_ref();
        crate::dataset::write_manifest(path, &self.manifest)?;
        let prov = provenance_path(path);
        fs::write(&prov, self.provenance_tsv()).map_err(|source| AugmentError::Io {
            path: prov.clone(),
            source,
        })?;
        Ok(prov)
    }
}

pub fn provenance_path(manifest_path: &Path) -> PathBuf {
    let mut p = manifest_path.as_os_str().to_owned();
    p.push(".provenance.tsv");
    PathBuf::from(p)
}

/// One augmentation stage over a manifest. Stage 3 first keeps only the hard
/// examples under `model`.
pub fn run_stage(
    manifest: &DatasetManifest,
    cfg: &AugmentStageConfig,
    model: Option<&WeightStore>,
) -> Result<StageOutput, AugmentError> {
    cfg.validate()?;
    let hard;
    let input = if cfg.stage == Stage::S3 {
        let model = model.ok_or(AugmentError::MissingModel)?;
        let threshold = cfg.hard_threshold.expect("validated");
        hard = select_hard_examples(model, manifest, threshold)?;
        &hard
    } else {
        manifest
    };
    let sources = input.load_samples()?;
    let derived = augment_samples(&sources, FaceLayout::of(input), cfg)?;

    let mut out = input.with_same_header();
    let mut provenance = Vec::with_capacity(derived.len());
    for d in derived {
        let entry: ManifestEntry = ManifestEntry::from_sample(&d.sample)
            .ok_or_else(|| AugmentError::InMemoryImage(d.sample.meta.id.clone()))?;
        provenance.push((entry.id.clone(), d.provenance));
        out.entries.push(entry);
    }
    let mut warnings = Vec::new();
    if out.entries.is_empty() {
        warnings.push(format!(
            "stage {} produced no samples from {} sources (all discarded or none selected)",
            cfg.stage,
            sources.len()
        ));
    }
    Ok(StageOutput {
        manifest: out,
        provenance,
        warnings,
    })
}
