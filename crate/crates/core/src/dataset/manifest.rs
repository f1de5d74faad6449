//! Line-oriented dataset manifests.
//!
//! ```text
//! #n_landmarks=68
//! #left_eye=36
//! #right_eye=45
//! #mirror_perm=16,15,...,0,...
//! sample_id<TAB>image_path<TAB>x,y,w,h<TAB>landmark_source<TAB>tags
//! ```
//!
//! `landmark_source` is a path to a `.pts` file or `inline:x,y;x,y;...`.
//! `tags` is `-` or `key=value` pairs joined by `;`. Known keys: `src` (id of
//! the original sample) and `warp` (six comma-separated affine coefficients
//! mapping the sample frame into the image file). Relative paths resolve
//! against the manifest's directory. Other `#` lines are comments.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::pts::parse_pts;
use super::{DatasetError, FaceSample, ImageRef, SampleMeta};
use crate::geometry::{Affine2, BBox, Point};
use crate::landmarks::{CoordinateFrame, LandmarkSet};

#[derive(Debug, Clone, PartialEq)]
pub enum LandmarkSource {
    File(PathBuf),
    Inline(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub bbox: BBox,
    pub landmarks: LandmarkSource,
    pub tags: Vec<(String, String)>,
}

impl ManifestEntry {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Entry with inline landmarks for a sample whose image lives on disk.
    pub fn from_sample(sample: &FaceSample) -> Option<ManifestEntry> {
        let ImageRef::Path(image_path) = &sample.image else {
            return None;
        };
        let mut tags = Vec::new();
        if !sample.meta.source.is_empty() && sample.meta.source != sample.meta.id {
            tags.push(("src".to_string(), sample.meta.source.clone()));
        }
        if !sample.warp.is_identity() {
            let w = sample.warp.to_array().map(|v| v.to_string()).join(",");
            tags.push(("warp".to_string(), w));
        }
        Some(ManifestEntry {
            id: sample.meta.id.clone(),
            image_path: image_path.clone(),
            bbox: sample.bbox,
            landmarks: LandmarkSource::Inline(sample.landmarks.points().to_vec()),
            tags,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub n_landmarks: usize,
    pub left_eye: usize,
    pub right_eye: usize,
    /// `mirror_perm[i]` is the landmark that takes index `i` after a flip.
    pub mirror_perm: Vec<usize>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against. Not serialized.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifestWarning {
    MissingFile { entry: String, path: PathBuf },
    DuplicateId(String),
}

impl std::fmt::Display for ManifestWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ManifestWarning::MissingFile { entry, path } => {
                write!(
                    f,
                    "entry {entry:?}: missing file {} (skipped)",
                    path.display()
                )
            }
            ManifestWarning::DuplicateId(id) => write!(f, "duplicate sample id {id:?} (skipped)"),
        }
    }
}

impl DatasetManifest {
    pub fn new(
        n_landmarks: usize,
        left_eye: usize,
        right_eye: usize,
        mirror_perm: Vec<usize>,
    ) -> Self {
        Self {
            n_landmarks,
            left_eye,
            right_eye,
            mirror_perm,
            entries: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    /// Same header, no entries.
    pub fn with_same_header(&self) -> Self {
        Self {
            entries: Vec::new(),
            ..self.clone()
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Header invariants: indices in range, distinct eyes, involutive mirror table.
    pub fn validate_header(&self) -> Result<(), DatasetError> {
        let n = self.n_landmarks;
        let bad = |m: String| Err(DatasetError::InvalidManifest(m));
        if n == 0 {
            return bad("n_landmarks must be >= 1".into());
        }
        if self.left_eye >= n || self.right_eye >= n {
            return bad(format!(
                "eye indices ({}, {}) out of range for {n} landmarks",
                self.left_eye, self.right_eye
            ));
        }
        if self.left_eye == self.right_eye {
            return bad("left_eye and right_eye must differ".into());
        }
        if self.mirror_perm.len() != n {
            return bad(format!(
                "mirror_perm has {} entries, expected {n}",
                self.mirror_perm.len()
            ));
        }
        for (i, &j) in self.mirror_perm.iter().enumerate() {
            if j >= n {
                return bad(format!("mirror_perm[{i}] = {j} is out of range"));
            }
            if self.mirror_perm[j] != i {
                return bad(format!(
                    "mirror_perm is not an involution: {i} -> {j} -> {}",
                    self.mirror_perm[j]
                ));
            }
        }
        Ok(())
    }

    fn check_id(id: &str) -> Result<(), DatasetError> {
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(DatasetError::InvalidManifest(format!(
                "invalid sample id {id:?}"
            )));
        }
        Ok(())
    }

    /// Loads every entry's landmarks (reading pts files) as [`FaceSample`]s.
    pub fn load_samples(&self) -> Result<Vec<FaceSample>, DatasetError> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }

    pub fn load_sample(&self, e: &ManifestEntry) -> Result<FaceSample, DatasetError> {
        let landmarks = match &e.landmarks {
            LandmarkSource::File(p) => parse_pts(self.resolve(p))?,
            LandmarkSource::Inline(points) => {
                if points.is_empty() {
                    return Err(DatasetError::LandmarkCount {
                        entry: e.id.clone(),
                        expected: self.n_landmarks,
                        found: 0,
                    });
                }
                LandmarkSet::new(points.clone(), CoordinateFrame::ImagePixels)
            }
        };
        if landmarks.len() != self.n_landmarks {
            return Err(DatasetError::LandmarkCount {
                entry: e.id.clone(),
                expected: self.n_landmarks,
                found: landmarks.len(),
            });
        }
        let warp = match e.tag("warp") {
            None => Affine2::IDENTITY,
            Some(w) => parse_warp(w).ok_or_else(|| {
                DatasetError::InvalidManifest(format!("entry {:?}: bad warp tag {w:?}", e.id))
            })?,
        };
        Ok(FaceSample {
            image: ImageRef::Path(self.resolve(&e.image_path)),
            bbox: e.bbox,
            landmarks,
            warp,
            meta: SampleMeta {
                id: e.id.clone(),
                source: e.tag("src").unwrap_or(&e.id).to_string(),
            },
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "#n_landmarks={}", self.n_landmarks).unwrap();
        writeln!(s, "#left_eye={}", self.left_eye).unwrap();
        writeln!(s, "#right_eye={}", self.right_eye).unwrap();
        let perm: Vec<String> = self.mirror_perm.iter().map(|v| v.to_string()).collect();
        writeln!(s, "#mirror_perm={}", perm.join(",")).unwrap();
        for e in &self.entries {
            let lm = match &e.landmarks {
                LandmarkSource::File(p) => p.display().to_string(),
                LandmarkSource::Inline(points) => {
                    let pts: Vec<String> =
                        points.iter().map(|p| format!("{},{}", p.x, p.y)).collect();
                    format!("inline:{}", pts.join(";"))
                }
            };
            let tags = if e.tags.is_empty() {
                "-".to_string()
            } else {
                let t: Vec<String> = e.tags.iter().map(|(k, v)| format!("{k}={v}")).collect();
                t.join(";")
            };
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                e.id,
                e.image_path.display(),
                e.bbox,
                lm,
                tags
            )
            .unwrap();
        }
        s
    }
}

fn parse_warp(s: &str) -> Option<Affine2> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.parse().ok())
        .collect::<Option<_>>()?;
    let arr: [f64; 6] = v.try_into().ok()?;
    let a = Affine2::from_array(arr);
    a.inverse().map(|_| a)
}

fn parse_text(text: &str, path: &Path) -> Result<DatasetManifest, DatasetError> {
    let err = |line: usize, message: String| DatasetError::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut n_landmarks = None;
    let mut left = None;
    let mut right = None;
    let mut perm = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let Some((key, value)) = header.split_once('=') else {
                continue;
            };
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| err(n, format!("invalid number {v:?} for {key}")))
            };
            match key.trim() {
                "n_landmarks" => n_landmarks = Some(num(value)?),
                "left_eye" => left = Some(num(value)?),
                "right_eye" => right = Some(num(value)?),
                "mirror_perm" => {
                    perm = Some(value.split(',').map(num).collect::<Result<Vec<_>, _>>()?)
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, image, bbox, lm, tags] = fields[..] else {
            return Err(err(
                n,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        };
        DatasetManifest::check_id(id).map_err(|e| err(n, e.to_string()))?;
        let bbox: BBox = bbox.parse().map_err(|e| err(n, format!("{e}")))?;
        let landmarks = match lm.strip_prefix("inline:") {
            Some(body) => LandmarkSource::Inline(
                body.split(';')
                    .map(|pair| {
                        let (x, y) = pair.split_once(',')?;
                        Some(Point::new(x.parse().ok()?, y.parse().ok()?))
                    })
                    .collect::<Option<Vec<_>>>()
                    .filter(|v| v.iter().all(|p| p.is_finite()))
                    .ok_or_else(|| err(n, "malformed inline landmarks".into()))?,
            ),
            None => LandmarkSource::File(PathBuf::from(lm)),
        };
        let tags = if tags == "-" {
            Vec::new()
        } else {
            tags.split(';')
                .map(|t| {
                    t.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| err(n, format!("malformed tag {t:?}")))
                })
                .collect::<Result<_, _>>()?
        };
        entries.push(ManifestEntry {
            id: id.to_string(),
            image_path: PathBuf::from(image),
            bbox,
            landmarks,
            tags,
        });
    }
    let missing = |k: &str| err(1, format!("missing header #{k}="));
    Ok(DatasetManifest {
        n_landmarks: n_landmarks.ok_or_else(|| missing("n_landmarks"))?,
        left_eye: left.ok_or_else(|| missing("left_eye"))?,
        right_eye: right.ok_or_else(|| missing("right_eye"))?,
        mirror_perm: perm.ok_or_else(|| missing("mirror_perm"))?,
        entries,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

fn read_impl(
    path: &Path,
    lenient: bool,
) -> Result<(DatasetManifest, Vec<ManifestWarning>), DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut m = parse_text(&text, path)?;
    m.base_dir = std::path::absolute(&m.base_dir).unwrap_or(m.base_dir);
    m.validate_header()?;

    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(m.entries.len());
    for e in std::mem::take(&mut m.entries) {
        if !seen.insert(e.id.clone()) {
            if !lenient {
                return Err(DatasetError::DuplicateId(e.id));
            }
            warnings.push(ManifestWarning::DuplicateId(e.id));
            continue;
        }
        let mut files = vec![m.resolve(&e.image_path)];
        if let LandmarkSource::File(p) = &e.landmarks {
            files.push(m.resolve(p));
        }
        if let Some(missing) = files.into_iter().find(|p| !p.exists()) {
            if !lenient {
                return Err(DatasetError::MissingFile {
                    entry: e.id,
                    path: missing,
                });
            }
            warnings.push(ManifestWarning::MissingFile {
                entry: e.id,
                path: missing,
            });
            continue;
        }
        kept.push(e);
    }
    m.entries = kept;
    Ok((m, warnings))
}

/// Reads and validates a manifest; any missing file or duplicate id is an error.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    read_impl(path.as_ref(), false).map(|(m, _)| m)
}

/// Like [`read_manifest`], but entries with missing files or repeated ids are
/// skipped and reported as warnings. Header problems are still errors.
pub fn read_manifest_lenient(
    path: impl AsRef<Path>,
) -> Result<(DatasetManifest, Vec<ManifestWarning>), DatasetError> {
    read_impl(path.as_ref(), true)
}

/// Validates, then writes atomically (temporary file, then rename).
pub fn write_manifest(
    path: impl AsRef<Path>,
    manifest: &DatasetManifest,
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    manifest.validate_header()?;
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        DatasetManifest::check_id(&e.id)?;
        if !seen.insert(e.id.as_str()) {
            return Err(DatasetError::DuplicateId(e.id.clone()));
        }
    }
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, manifest.to_text()).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
