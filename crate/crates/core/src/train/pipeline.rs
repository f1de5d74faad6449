//! Stage chaining: each stage fine-tunes the previous stage's weights.

use std::path::Path;

use super::config::PipelineConfig;
use super::{
    load_checkpoint, train_stage, StageSchedule, TrainError, TrainSet, TrainState, TrainingLog,
};
use crate::augment::{run_stage, AugmentStageConfig, Stage};
use crate::dataset::{read_manifest, DatasetManifest};
use crate::model::{build_network, load_weights, WeightStore};

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub weights: WeightStore,
    pub logs: Vec<TrainingLog>,
    /// Human-readable notes, such as a skipped stage.
    pub notices: Vec<String>,
}

fn in_stage<T>(name: &str, r: Result<T, TrainError>) -> Result<T, TrainError> {
    r.map_err(|e| match e {
        TrainError::Stage { .. } => e,
        other => TrainError::Stage {
            stage: name.to_string(),
            source: Box::new(other),
        },
    })
}

fn initial_state(
    config: &PipelineConfig,
    schedule: &StageSchedule,
    manifest: &DatasetManifest,
    previous: Option<WeightStore>,
) -> Result<TrainState, TrainError> {
    let weights = match (&schedule.init_from, previous) {
        (Some(path), _) => load_weights(path)?,
        (None, Some(ws)) => ws,
        (None, None) => build_network(&config.network.resolve(manifest.n_landmarks))?,
    };
    if weights.spec().n_landmarks != manifest.n_landmarks {
        return Err(TrainError::LandmarkMismatch {
            manifest: manifest.n_landmarks,
            network: weights.spec().n_landmarks,
        });
    }
    Ok(TrainState::fresh(weights))
}

fn train_on(
    state: TrainState,
    manifest: &DatasetManifest,
    schedule: &StageSchedule,
    out_dir: &Path,
) -> Result<(TrainState, TrainingLog), TrainError> {
    let side = state.weights.spec().input_side;
    let data = TrainSet::new(manifest.load_samples()?, side);
    let (state, log) = train_stage(state, &data, schedule, Some(out_dir))?;
    log.write_csv(out_dir.join(format!("{}_log.csv", schedule.name)))?;
    Ok((state, log))
}

/// Runs one named stage, optionally resuming from a checkpoint written by an
/// earlier run of the same stage.
pub fn run_single_stage(
    config: &PipelineConfig,
    name: &str,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(WeightStore, TrainingLog), TrainError> {
    let schedule = config
        .stage(name)
        .ok_or_else(|| TrainError::Config(format!("no stage named {name:?}")))?;
    in_stage(
        name,
        (|| {
            let path = schedule.manifest.as_ref().ok_or_else(|| {
                TrainError::Config(
                    "a stage without a manifest only runs inside the full pipeline".into(),
                )
            })?;
            let manifest = read_manifest(path)?;
            let state = match resume {
                Some(ckpt) => load_checkpoint(ckpt)?,
                None => initial_state(config, schedule, &manifest, None)?,
            };
            let (state, log) = train_on(state, &manifest, schedule, out_dir)?;
            Ok((state.weights, log))
        })(),
    )
}

/// Trains every configured stage in order, handing each stage's final
/// weights to the next. A final stage without a manifest trains on hard
/// examples mined with the weights so far; if none qualify, it is skipped
/// with a notice.
pub fn run_three_stage(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineResult, TrainError> {
    let mut weights: Option<WeightStore> = None;
    let mut logs = Vec::new();
    let mut notices = Vec::new();
    for schedule in &config.stages {
        let name = schedule.name.as_str();
        let step = in_stage(
            name,
            (|| {
                let manifest = match &schedule.manifest {
                    Some(path) => read_manifest(path)?,
                    None => {
                        let hard = config.hard_examples.as_ref().expect("checked when parsing");
                        let model = weights.as_ref().ok_or_else(|| {
                            TrainError::Config("hard-example mining needs a previous stage".into())
                        })?;
                        let source = read_manifest(&hard.source_manifest)?;
                        let mut cfg = AugmentStageConfig::defaults(Stage::S3);
                        cfg.hard_threshold = Some(hard.threshold);
                        cfg.rng_seed = hard.seed;
                        let mined = run_stage(&source, &cfg, Some(model))?;
                        if mined.manifest.entries.is_empty() {
                            return Ok(None);
                        }
                        let path = out_dir.join(format!("{name}_data.tsv"));
                        mined.write(&path)?;
                        read_manifest(&path)?
                    }
                };
                let state = initial_state(config, schedule, &manifest, weights.clone())?;
                train_on(state, &manifest, schedule, out_dir).map(Some)
            })(),
        )?;
        match step {
            Some((state, log)) => {
                weights = Some(state.weights);
                logs.push(log);
            }
            None => notices.push(format!(
                "stage {name} skipped: no training sample exceeds the hard-example threshold"
            )),
        }
    }
    Ok(PipelineResult {
        weights: weights.ok_or_else(|| TrainError::Config("no stage was trained".into()))?,
        logs,
        notices,
    })
}
