use std::fs;
use std::path::Path;
use std::sync::Arc;

use sdn_core::dataset::{FaceSample, GrayImage, ImageRef};
use sdn_core::model::{
    backward, build_network, weights_to_bytes, GroupSpec, NetworkSpec, WeightStore,
};
use sdn_core::nn::sgd_update;
use sdn_core::synthetic;
use sdn_core::train::{
    load_checkpoint, parse_config, run_three_stage, train_stage, LrPolicy, StageSchedule,
    TrainError, TrainSet, TrainState,
};

fn small_net(side: usize) -> WeightStore {
    build_network(&NetworkSpec {
        input_side: side,
        n_landmarks: synthetic::N_LANDMARKS,
        groups: vec![
            GroupSpec::new(3, 2, 2),
            GroupSpec::new(3, 4, 4),
            GroupSpec::new(3, 4, 4),
        ],
        fc_hidden: 8,
        seed: 5,
    })
    .unwrap()
}

fn schedule(iters: u64) -> StageSchedule {
    let mut s = StageSchedule::new("s1", LrPolicy::step(0.01, 0.5, 4), iters);
    s.batch_size = 3;
    s.momentum = 0.9;
    s.shuffle_seed = 4;
    s
}

#[test]
fn resuming_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = TrainSet::new(synthetic::faces(7, 32, 1), 32);
    let mut full = schedule(10);
    full.checkpoint_every = 5;
    let (straight, log) = train_stage(
        TrainState::fresh(small_net(32)),
        &data,
        &full,
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(log.checkpoints.len(), 2);

    let mid = load_checkpoint(dir.path().join("s1_iter5.ckpt")).unwrap();
    assert_eq!(mid.iteration, 5);
    assert!(mid.velocity.is_some());
    let (resumed, tail) = train_stage(mid, &data, &schedule(10), None).unwrap();
    assert_eq!(
        weights_to_bytes(&resumed.weights),
        weights_to_bytes(&straight.weights)
    );
    assert_eq!(tail.entries, log.entries[5..]);
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let ws = small_net(32);
    let data = TrainSet::new(synthetic::faces(4, 32, 2), 32);
    let (x, y) = data.assemble(&[0, 1, 2, 3]).unwrap();
    let (_, grads) = backward(&ws, &x, &y).unwrap();
    assert!(grads.max_abs() > 0.0);
    let mut updated = ws.clone();
    for (layer, g) in updated.layers_mut().iter_mut().zip(&grads.layers) {
        sgd_update(layer.params.weights_mut(), &g.d_weights, 0.0).unwrap();
        sgd_update(layer.params.bias_mut(), &g.d_bias, 0.0).unwrap();
    }
    assert_eq!(weights_to_bytes(&updated), weights_to_bytes(&ws));
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let mut faces = synthetic::faces(2, 32, 3);
    faces[1] = FaceSample {
        image: ImageRef::Memory(Arc::new(GrayImage::from_fn(32, 32, |_, _| f32::NAN))),
        ..faces[1].clone()
    };
    let data = TrainSet::new(faces, 32);
    let mut s = schedule(3);
    s.batch_size = 2;
    let err = train_stage(TrainState::fresh(small_net(32)), &data, &s, None).unwrap_err();
    assert!(err.is_numerical());
    match err {
        TrainError::NonFinite {
            iter,
            lr,
            batch_ids,
            ..
        } => {
            assert_eq!(iter, 0);
            assert_eq!(lr, 0.01);
            assert!(batch_ids.contains(&"face0001".to_string()));
        }
        other => panic!("unexpected error {other}"),
    }
}

fn pipeline_config(dir: &Path, threshold: f64) -> String {
    let faces = synthetic::faces(4, 32, 8);
    synthetic::write_dataset(dir, "train.tsv", &faces).unwrap();
    format!(
        r#"
[network]
input_side = 32
groups = [[3, 2, 2], [3, 2, 2], [3, 4, 4]]
fc_hidden = 4

[hard_examples]
source_manifest = "train.tsv"
threshold = {threshold}

[[stage]]
name = "s1"
manifest = "train.tsv"
policy = "fixed"
base_lr = 0.001
batch_size = 2
max_iterations = 1

[[stage]]
name = "s2"
manifest = "train.tsv"
policy = "step"
base_lr = 0.001
gamma = 0.1
step_size = 1
batch_size = 2
max_iterations = 1

[[stage]]
name = "s3"
policy = "inv"
base_lr = 0.001
gamma = 0.00001
power = 0.75
batch_size = 2
max_iterations = 1
"#
    )
}

#[test]
fn three_stages_chain_their_weights() {
    let dir = tempfile::tempdir().unwrap();
    let text = pipeline_config(dir.path(), 0.0);
    let config = parse_config(&text, dir.path()).unwrap();
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let result = run_three_stage(&config, &out).unwrap();
    assert!(result.notices.is_empty());
    assert_eq!(result.logs.len(), 3);
    for stage in ["s1", "s2", "s3"] {
        assert!(out.join(format!("{stage}_iter1.sdnw")).exists(), "{stage}");
        assert!(out.join(format!("{stage}_log.csv")).exists(), "{stage}");
    }
    assert!(out.join("s3_data.tsv").exists());
    let s2 = sdn_core::model::load_weights(out.join("s2_iter1.sdnw")).unwrap();
    let s3_start = load_checkpoint(out.join("s3_iter1.ckpt")).unwrap();
    assert_eq!(s3_start.iteration, 1);
    assert_ne!(weights_to_bytes(&s2), weights_to_bytes(&result.weights));
    assert_eq!(
        weights_to_bytes(&s3_start.weights),
        weights_to_bytes(&result.weights)
    );
}

#[test]
fn stage_three_is_skipped_without_hard_examples() {
    let dir = tempfile::tempdir().unwrap();
    let config = parse_config(&pipeline_config(dir.path(), 1e9), dir.path()).unwrap();
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let result = run_three_stage(&config, &out).unwrap();
    assert_eq!(result.logs.len(), 2);
    assert_eq!(result.notices.len(), 1);
    assert!(result.notices[0].contains("s3"));
    assert!(!out.join("s3_iter1.sdnw").exists());
}
