//! Mini-batch SGD training, checkpoints and the three-stage pipeline.

mod config;
mod lr;
mod pipeline;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::AugmentError;
use crate::dataset::{canonical_crop, DatasetError, FaceSample, ImageCache};
use crate::model::{backward_with, LossKind, ModelError, WeightIoError, WeightStore};
use crate::nn::sgd_momentum_update;
use crate::par;
use crate::tensor::Tensor;

pub use config::{parse_config, read_config, HardExampleConfig, NetworkOverrides, PipelineConfig};
pub use lr::{lr_at, LrKind, LrPolicy};
pub use pipeline::{run_single_stage, run_three_stage, PipelineResult};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(
        "non-finite loss {loss} at iteration {iter} (lr {lr}); batch: {}",
        batch_ids.join(", ")
    )]
    NonFinite {
        iter: u64,
        lr: f64,
        loss: f64,
        batch_ids: Vec<String>,
    },
    #[error("manifest has {manifest} landmarks, network predicts {network}")]
    LandmarkMismatch { manifest: usize, network: usize },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<TrainError>,
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
    #[error(transparent)]
    Weights(#[from] WeightIoError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

impl TrainError {
    /// Whether the failure is numerical (divergence) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::NonFinite { .. } => true,
            TrainError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub name: String,
    /// Training data. `None` only for a final stage whose data is mined as
    /// hard examples by the pipeline.
    pub manifest: Option<PathBuf>,
    pub policy: LrPolicy,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub init_from: Option<PathBuf>,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub shuffle_seed: u64,
    pub momentum: f64,
    pub loss: LossKind,
}

impl StageSchedule {
    pub fn new(name: impl Into<String>, policy: LrPolicy, max_iterations: u64) -> Self {
        Self {
            name: name.into(),
            manifest: None,
            policy,
            batch_size: 64,
            max_iterations,
            init_from: None,
            checkpoint_every: 0,
            shuffle_seed: 0,
            momentum: 0.0,
            loss: LossKind::Euclidean,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(format!("stage {}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("stage name must be non-empty and contain no path separators".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        self.policy
            .validate()
            .map_err(|e| TrainError::Config(format!("stage {}: {e}", self.name)))
    }
}

/// Epoch-wise shuffled batches. Epoch `e` uses a permutation drawn from
/// stream `e` of the seeded generator; the last batch of an epoch is topped
/// up from the head of the same permutation. Any iteration's batch can be
/// computed directly, which is what makes resuming exact.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    batch: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochSampler {
    /// # Panics
    /// If `n` or `batch` is zero.
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        assert!(n > 0 && batch > 0);
        Self {
            n,
            batch,
            seed,
            cached: None,
        }
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.n.div_ceil(self.batch) as u64
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut rng);
            self.cached = Some((epoch, perm));
        }
        &self.cached.as_ref().unwrap().1
    }

    pub fn batch(&mut self, iter: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch();
        let (epoch, k) = (iter / per_epoch, (iter % per_epoch) as usize);
        let (n, b) = (self.n, self.batch);
        let perm = self.permutation(epoch);
        (0..b).map(|j| perm[(k * b + j) % n]).collect()
    }
}

/// Training samples with their crop side. Crops are rendered on demand.
pub struct TrainSet {
    samples: Vec<FaceSample>,
    cache: ImageCache,
    side: usize,
}

impl TrainSet {
    pub fn new(samples: Vec<FaceSample>, side: usize) -> Self {
        Self {
            samples,
            cache: ImageCache::new(),
            side,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[FaceSample] {
        &self.samples
    }

    /// `[B, 1, S, S]` inputs and `[B, 2N]` crop-unit targets.
    pub fn assemble(&self, indices: &[usize]) -> Result<(Tensor, Tensor), TrainError> {
        let side = self.side;
        let items = par::try_map_indexed(indices.len(), |i| {
            let s = &self.samples[indices[i]];
            let input = canonical_crop(&self.cache, s, side)?;
            let target: Vec<f32> = input
                .targets(&s.landmarks)
                .to_flat()
                .into_iter()
                .map(|v| v as f32)
                .collect();
            Ok::<_, DatasetError>((input.pixels.into_data(), target))
        })?;
        let b = indices.len();
        let out_dim = items[0].1.len();
        let mut x = Vec::with_capacity(b * side * side);
        let mut y = Vec::with_capacity(b * out_dim);
        for (p, t) in items {
            x.extend_from_slice(&p);
            y.extend_from_slice(&t);
        }
        Ok((
            Tensor::new([b, 1, side, side], x).map_err(ModelError::from)?,
            Tensor::new([b, out_dim], y).map_err(ModelError::from)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub stage: String,
    pub entries: Vec<LogEntry>,
    pub checkpoints: Vec<(u64, PathBuf)>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,lr,loss\n");
        for e in &self.entries {
            writeln!(s, "{},{},{}", e.iter, e.lr, e.loss).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(|(_, p)| p.as_path())
    }
}

/// Where a stage starts: weights, momentum state and the first iteration.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub weights: WeightStore,
    pub velocity: Option<WeightStore>,
    pub iteration: u64,
}

impl TrainState {
    pub fn fresh(weights: WeightStore) -> Self {
        Self {
            weights,
            velocity: None,
            iteration: 0,
        }
    }
}

fn checkpoint_stem(out_dir: &Path, stage: &str, iter: u64) -> PathBuf {
    out_dir.join(format!("{stage}_iter{iter}"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<stage>_iter<N>.sdnw`, `.velocity.sdnw` when momentum is in use,
/// and a `.ckpt` descriptor. Returns the weight file path.
pub fn save_checkpoint(
    out_dir: &Path,
    stage: &str,
    state: &TrainState,
) -> Result<PathBuf, TrainError> {
    fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let stem = checkpoint_stem(out_dir, stage, state.iteration);
    let weights = with_suffix(&stem, ".sdnw");
    crate::model::save_weights(&state.weights, &weights)?;
    if let Some(v) = &state.velocity {
        crate::model::save_weights(v, with_suffix(&stem, ".velocity.sdnw"))?;
    }
    let desc = with_suffix(&stem, ".ckpt");
    let text = format!("stage={stage}\niteration={}\n", state.iteration);
    fs::write(&desc, text).map_err(|source| TrainError::Io { path: desc, source })?;
    Ok(weights)
}

/// Loads a checkpoint from its `.sdnw` or `.ckpt` path.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState, TrainError> {
    let path = path.as_ref();
    let s = path.to_string_lossy();
    let stem = PathBuf::from(
        s.strip_suffix(".ckpt")
            .or_else(|| s.strip_suffix(".sdnw"))
            .unwrap_or(&s),
    );
    let desc = with_suffix(&stem, ".ckpt");
    let text = fs::read_to_string(&desc).map_err(|source| TrainError::Io {
        path: desc.clone(),
        source,
    })?;
    let iteration = text
        .lines()
        .find_map(|l| l.strip_prefix("iteration="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| TrainError::Config(format!("{}: missing iteration", desc.display())))?;
    let weights = crate::model::load_weights(with_suffix(&stem, ".sdnw"))?;
    let vpath = with_suffix(&stem, ".velocity.sdnw");
    let velocity = if vpath.exists() {
        Some(crate::model::load_weights(vpath)?)
    } else {
        None
    };
    Ok(TrainState {
        weights,
        velocity,
        iteration,
    })
}

/// Runs `schedule` from `state.iteration` up to `max_iterations`.
/// Checkpoints go to `out_dir` when given, every `checkpoint_every`
/// iterations and at the end.
pub fn train_stage(
    mut state: TrainState,
    data: &TrainSet,
    schedule: &StageSchedule,
    out_dir: Option<&Path>,
) -> Result<(TrainState, TrainingLog), TrainError> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config(format!(
            "stage {}: no training samples",
            schedule.name
        )));
    }
    let n_landmarks = data.samples[0].landmarks.len();
    if n_landmarks != state.weights.spec().n_landmarks {
        return Err(TrainError::LandmarkMismatch {
            manifest: n_landmarks,
            network: state.weights.spec().n_landmarks,
        });
    }
    let momentum = schedule.momentum as f32;
    if momentum > 0.0 && state.velocity.is_none() {
        state.velocity = Some(state.weights.zeros_like());
    }
    let mut sampler = EpochSampler::new(data.len(), schedule.batch_size, schedule.shuffle_seed);
    let mut log = TrainingLog {
        stage: schedule.name.clone(),
        ..Default::default()
    };

    while state.iteration < schedule.max_iterations {
        let iter = state.iteration;
        let indices = sampler.batch(iter);
        let (x, y) = data.assemble(&indices)?;
        let lr = lr_at(&schedule.policy, iter);
        let (loss, grads) = backward_with(&state.weights, &x, &y, schedule.loss)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                iter,
                lr,
                loss,
                batch_ids: indices
                    .iter()
                    .map(|&i| data.samples[i].meta.id.clone())
                    .collect(),
            });
        }
        let mut scratch = None;
        let velocity = match state.velocity.as_mut() {
            Some(v) => v,
            None => scratch.insert(state.weights.zeros_like()),
        };
        for ((layer, vel), g) in state
            .weights
            .layers_mut()
            .iter_mut()
            .zip(velocity.layers_mut())
            .zip(&grads.layers)
        {
            let lr = lr as f32;
            sgd_momentum_update(
                layer.params.weights_mut(),
                vel.params.weights_mut(),
                &g.d_weights,
                lr,
                momentum,
            )
            .map_err(ModelError::from)?;
            sgd_momentum_update(
                layer.params.bias_mut(),
                vel.params.bias_mut(),
                &g.d_bias,
                lr,
                momentum,
            )
            .map_err(ModelError::from)?;
        }
        log.entries.push(LogEntry { iter, lr, loss });
        state.iteration += 1;

        let periodic = schedule.checkpoint_every > 0
            && state.iteration.is_multiple_of(schedule.checkpoint_every);
        let last = state.iteration == schedule.max_iterations;
        if let Some(dir) = out_dir {
            if periodic || last {
                let path = save_checkpoint(dir, &schedule.name, &state)?;
                log.checkpoints.push((state.iteration, path));
            }
        }
    }
    Ok((state, log))
}
