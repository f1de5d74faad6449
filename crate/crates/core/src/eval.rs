//! Evaluation: inter-ocular normalized error, failure rate, cumulative error
//! distribution and forward-pass timing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{
    canonical_crop, from_crop_frame, DatasetError, DatasetManifest, FaceSample, ImageCache,
};
use crate::landmarks::{CoordinateFrame, LandmarkSet};
use crate::model::{forward, forward_single, ModelError, WeightStore};
use crate::par;
use crate::tensor::Tensor;

pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eye points coincide (inter-ocular distance is zero)")]
    CoincidentEyes,
    #[error("landmark frames differ ({pred:?} vs {gt:?})")]
    FrameMismatch {
        pred: CoordinateFrame,
        gt: CoordinateFrame,
    },
    #[error("prediction has {pred} landmarks, ground truth {gt}")]
    LandmarkCount { pred: usize, gt: usize },
    #[error("eye index {0} out of range")]
    EyeIndex(usize),
    #[error("no errors to aggregate")]
    Empty,
    #[error("threshold grid must be strictly increasing")]
    InvalidGrid,
    #[error("n_runs must be >= 1")]
    NoRuns,
    #[error("sample {0:?} has no prediction")]
    MissingPrediction(String),
    #[error("sample {id:?}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean per-point Euclidean error divided by the ground-truth distance
/// between landmarks `left` and `right`.
pub fn nrmse(
    pred: &LandmarkSet,
    gt: &LandmarkSet,
    left: usize,
    right: usize,
) -> Result<f64, EvalError> {
    if pred.frame() != gt.frame() {
        return Err(EvalError::FrameMismatch {
            pred: pred.frame(),
            gt: gt.frame(),
        });
    }
    if pred.len() != gt.len() {
        return Err(EvalError::LandmarkCount {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    for i in [left, right] {
        if i >= gt.len() {
            return Err(EvalError::EyeIndex(i));
        }
    }
    let iod = gt.points()[left].distance(gt.points()[right]);
    if iod == 0.0 || !iod.is_finite() {
        return Err(EvalError::CoincidentEyes);
    }
    let total: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| p.distance(*g))
        .sum();
    Ok(total / pred.len() as f64 / iod)
}

/// Percentage of errors strictly above `threshold`.
pub fn failure_rate(errors: &[f64], threshold: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let failures = errors.iter().filter(|&&e| e > threshold).count();
    Ok(100.0 * failures as f64 / errors.len() as f64)
}

/// `0, 0.002, ..., 0.1`.
pub fn default_ced_grid() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 0.002).collect()
}

/// Fraction of errors `<= t` for each grid point.
pub fn ced_curve(errors: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if grid.iter().any(|t| t.is_nan()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidGrid);
    }
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| (t, sorted.partition_point(|&e| e <= t) as f64 / n))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl TimingStats {
    pub fn fps(&self) -> f64 {
        1000.0 / self.mean_ms
    }
}

/// Wall-clock time of single-image forward passes on random inputs.
/// Warmup runs are not measured.
pub fn time_forward(
    ws: &WeightStore,
    n_warmup: usize,
    n_runs: usize,
) -> Result<TimingStats, EvalError> {
    if n_runs == 0 {
        return Err(EvalError::NoRuns);
    }
    let side = ws.spec().input_side;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = Tensor::from_fn([1, side, side], |_| rng.gen_range(-0.5..0.5));
    for _ in 0..n_warmup {
        forward_single(ws, &input)?;
    }
    let mut times = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let start = Instant::now();
        let out = forward_single(ws, &input)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let mean_ms = times.iter().sum::<f64>() / n_runs as f64;
    times.sort_by(f64::total_cmp);
    let median_ms = if n_runs % 2 == 1 {
        times[n_runs / 2]
    } else {
        (times[n_runs / 2 - 1] + times[n_runs / 2]) / 2.0
    };
    Ok(TimingStats {
        runs: n_runs,
        mean_ms,
        median_ms,
    })
}

/// Predicted landmarks for each sample, in the sample's own pixel frame.
pub fn predict(
    ws: &WeightStore,
    samples: &[FaceSample],
    cache: &ImageCache,
) -> Result<Vec<LandmarkSet>, EvalError> {
    const CHUNK: usize = 32;
    let side = ws.spec().input_side;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let inputs = par::try_map_indexed(chunk.len(), |i| canonical_crop(cache, &chunk[i], side))?;
        let pixels: Vec<Tensor> = inputs.iter().map(|n| n.pixels.clone()).collect();
        let batch = Tensor::stack(&pixels)
            .and_then(|t| t.reshape([chunk.len(), 1, side, side]))
            .map_err(ModelError::from)?;
        let pred = forward(ws, &batch)?;
        for (i, input) in inputs.iter().enumerate() {
            let flat: Vec<f64> = pred.outer(i).iter().map(|&v| v as f64).collect();
            let unit = LandmarkSet::from_flat(&flat, CoordinateFrame::CropUnit);
            out.push(from_crop_frame(&unit, &input.sample_transform));
        }
    }
    Ok(out)
}

/// Per-image errors with the aggregate statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sample_ids: Vec<String>,
    pub per_image_errors: Vec<f64>,
    /// Arithmetic mean of `per_image_errors`, summed in manifest order.
    pub mean_nrmse: f64,
    pub failure_threshold: f64,
    pub failure_count: usize,
    pub total_count: usize,
    /// Percentage.
    pub failure_rate: f64,
    pub ced: Vec<(f64, f64)>,
    pub timing: Option<TimingStats>,
}

impl EvalReport {
    pub fn from_errors(sample_ids: Vec<String>, errors: Vec<f64>) -> Result<EvalReport, EvalError> {
        let threshold = DEFAULT_FAILURE_THRESHOLD;
        let failure_rate = failure_rate(&errors, threshold)?;
        let ced = ced_curve(&errors, &default_ced_grid())?;
        let mut sum = 0.0;
        for e in &errors {
            sum += e;
        }
        Ok(EvalReport {
            mean_nrmse: sum / errors.len() as f64,
            failure_threshold: threshold,
            failure_count: errors.iter().filter(|&&e| e > threshold).count(),
            total_count: errors.len(),
            failure_rate,
            ced,
            timing: None,
            sample_ids,
            per_image_errors: errors,
        })
    }

    /// Writes `errors.csv`, `ced.csv` and `summary.csv` into `dir`. The fps
    /// column reads `NA` unless timing was measured.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        let io = |path: PathBuf| move |source| EvalError::Io { path, source };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;

        let mut errors = String::from("sample_id,nrmse\n");
        for (id, e) in self.sample_ids.iter().zip(&self.per_image_errors) {
            writeln!(errors, "{id},{e}").unwrap();
        }
        let mut ced = String::from("threshold,fraction\n");
        for (t, f) in &self.ced {
            writeln!(ced, "{t},{f}").unwrap();
        }
        let fps = self
            .timing
            .map(|t| t.fps().to_string())
            .unwrap_or_else(|| "NA".into());
        let summary = format!(
            "mean_nrmse,failure_rate,fps\n{},{},{fps}\n",
            self.mean_nrmse, self.failure_rate
        );
        for (name, text) in [
            ("errors.csv", errors),
            ("ced.csv", ced),
            ("summary.csv", summary),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(path))?;
        }
        Ok(())
    }
}

fn errors_for(
    manifest: &DatasetManifest,
    gt: &[FaceSample],
    pred: &[LandmarkSet],
) -> Result<EvalReport, EvalError> {
    let errors = par::try_map_indexed(gt.len(), |i| {
        nrmse(
            &pred[i],
            &gt[i].landmarks,
            manifest.left_eye,
            manifest.right_eye,
        )
        .map_err(|e| EvalError::Sample {
            id: gt[i].meta.id.clone(),
            source: Box::new(e),
        })
    })?;
    let ids = gt.iter().map(|s| s.meta.id.clone()).collect();
    EvalReport::from_errors(ids, errors)
}

/// Runs the model on every manifest entry and scores it.
pub fn evaluate_model(
    ws: &WeightStore,
    manifest: &DatasetManifest,
) -> Result<EvalReport, EvalError> {
    let samples = manifest.load_samples()?;
    let cache = ImageCache::new();
    let pred = predict(ws, &samples, &cache)?;
    errors_for(manifest, &samples, &pred)
}

/// Scores the landmarks of `predictions` against `truth`, matching entries by id.
pub fn evaluate_predictions(
    predictions: &DatasetManifest,
    truth: &DatasetManifest,
) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<String, FaceSample> = predictions
        .load_samples()?
        .into_iter()
        .map(|s| (s.meta.id.clone(), s))
        .collect();
    let gt = truth.load_samples()?;
    let pred = gt
        .iter()
        .map(|s| {
            by_id
                .get(&s.meta.id)
                .map(|p| p.landmarks.clone())
                .ok_or_else(|| EvalError::MissingPrediction(s.meta.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    errors_for(truth, &gt, &pred)
}
