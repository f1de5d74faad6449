//! TOML training configuration.
//!
//! ```toml
//! [network]                 # optional; omitted keys keep the defaults
//! input_side = 64
//! groups = [[3, 32, 32], [3, 64, 64], [3, 128, 128]]   # kernel, conv1, conv2
//! fc_hidden = 256
//! seed = 7
//!
//! [hard_examples]           # mines the data of a final stage without a manifest
//! source_manifest = "train.tsv"
//! threshold = 0.02
//! seed = 3
//!
//! [[stage]]
//! name = "s1"
//! manifest = "s1.tsv"
//! policy = "fixed"          # fixed | step | inv
//! base_lr = 0.001
//! gamma = 0.1               # step, inv
//! step_size = 20000         # step
//! power = 0.75              # inv
//! batch_size = 64
//! max_iterations = 60000
//! init_from = "w.sdnw"      # optional
//! checkpoint_every = 5000   # 0: final checkpoint only
//! shuffle_seed = 1
//! momentum = 0.0
//! loss = "euclidean"        # euclidean | squared
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{LrKind, LrPolicy, StageSchedule, TrainError};
use crate::model::{GroupSpec, LossKind, NetworkSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    pub input_side: Option<usize>,
    pub groups: Option<Vec<[usize; 3]>>,
    pub fc_hidden: Option<usize>,
    pub seed: Option<u64>,
}

impl NetworkOverrides {
    pub fn resolve(&self, n_landmarks: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::with_landmarks(n_landmarks);
        if let Some(s) = self.input_side {
            spec.input_side = s;
        }
        if let Some(groups) = &self.groups {
            spec.groups = groups
                .iter()
                .map(|&[k, c1, c2]| GroupSpec::new(k, c1, c2))
                .collect();
        }
        if let Some(h) = self.fc_hidden {
            spec.fc_hidden = h;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardExampleConfig {
    pub source_manifest: PathBuf,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub network: NetworkOverrides,
    pub hard_examples: Option<HardExampleConfig>,
    pub stages: Vec<StageSchedule>,
}

impl PipelineConfig {
    pub fn stage(&self, name: &str) -> Option<&StageSchedule> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    network: NetworkOverrides,
    hard_examples: Option<RawHard>,
    #[serde(default)]
    stage: Vec<RawStage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHard {
    source_manifest: PathBuf,
    threshold: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum RawLoss {
    Euclidean,
    Squared,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    name: String,
    manifest: Option<PathBuf>,
    policy: LrKind,
    base_lr: f64,
    gamma: Option<f64>,
    step_size: Option<u64>,
    power: Option<f64>,
    batch_size: Option<usize>,
    max_iterations: u64,
    init_from: Option<PathBuf>,
    checkpoint_every: Option<u64>,
    shuffle_seed: Option<u64>,
    momentum: Option<f64>,
    loss: Option<RawLoss>,
}

/// Parses config text; relative paths are joined onto `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<PipelineConfig, TrainError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
    if raw.stage.is_empty() {
        return Err(TrainError::Config("no [[stage]] sections".into()));
    }
    let n_stages = raw.stage.len();
    let mut stages = Vec::with_capacity(n_stages);
    for (i, s) in raw.stage.into_iter().enumerate() {
        let policy = LrPolicy {
            kind: s.policy,
            base_lr: s.base_lr,
            gamma: s.gamma.unwrap_or(0.0),
            step_size: s.step_size.unwrap_or(0),
            power: s.power.unwrap_or(0.0),
        };
        if s.manifest.is_none() && (i + 1 != n_stages || raw.hard_examples.is_none()) {
            return Err(TrainError::Config(format!(
                "stage {}: manifest is required (only the last stage may omit it, with [hard_examples])",
                s.name
            )));
        }
        let schedule = StageSchedule {
            name: s.name,
            manifest: s.manifest.map(resolve),
            policy,
            batch_size: s.batch_size.unwrap_or(64),
            max_iterations: s.max_iterations,
            init_from: s.init_from.map(resolve),
            checkpoint_every: s.checkpoint_every.unwrap_or(0),
            shuffle_seed: s.shuffle_seed.unwrap_or(i as u64),
            momentum: s.momentum.unwrap_or(0.0),
            loss: match s.loss.unwrap_or(RawLoss::Euclidean) {
                RawLoss::Euclidean => LossKind::Euclidean,
                RawLoss::Squared => LossKind::SquaredEuclidean,
            },
        };
        schedule.validate()?;
        if stages
            .iter()
            .any(|p: &StageSchedule| p.name == schedule.name)
        {
            return Err(TrainError::Config(format!(
                "duplicate stage name {}",
                schedule.name
            )));
        }
        stages.push(schedule);
    }
    let hard_examples = raw.hard_examples.map(|h| HardExampleConfig {
        source_manifest: resolve(h.source_manifest),
        threshold: h.threshold.unwrap_or(0.02),
        seed: h.seed.unwrap_or(3),
    });
    Ok(PipelineConfig {
        network: raw.network,
        hard_examples,
        stages,
    })
}

pub fn read_config(path: impl AsRef<Path>) -> Result<PipelineConfig, TrainError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}
