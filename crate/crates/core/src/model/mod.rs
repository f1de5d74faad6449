//! The three-group landmark regression network.
//!
//! Topology: three groups of `conv -> tanh -> conv -> tanh -> maxpool2x2`,
//! then a tanh hidden fully-connected layer and a linear output layer of
//! `2 * n_landmarks` values `(x1, y1, ..., xN, yN)` in crop-unit coordinates.

mod loss;
mod network;
mod receptive;
mod weights_io;

use std::fmt;

use thiserror::Error;

use crate::tensor::TensorError;

pub use loss::{loss_and_grad, loss_and_grad_with, LossKind};
pub use network::{
    backward, backward_with, build_network, forward, forward_single, Gradients, Layer, LayerParams,
    ParamGrads, WeightStore,
};
pub use receptive::{receptive_field, GroupField, ReceptiveField};
pub use weights_io::{
    load_weights, load_weights_expecting, save_weights, weights_from_bytes, weights_to_bytes,
    WeightIoError, FORMAT_VERSION, MAGIC,
};

pub const GROUP_COUNT: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("input shape mismatch: expected {expected:?}, got {actual:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One layer group: two stacked `k x k` convolutions (stride 1, same padding)
/// followed by 2x2 max-pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpec {
    pub kernel_size: usize,
    pub channels_conv1: usize,
    pub channels_conv2: usize,
}

impl GroupSpec {
    pub const fn new(kernel_size: usize, channels_conv1: usize, channels_conv2: usize) -> Self {
        Self {
            kernel_size,
            channels_conv1,
            channels_conv2,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel_size.saturating_sub(1) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_side: usize,
    pub n_landmarks: usize,
    pub groups: Vec<GroupSpec>,
    pub fc_hidden: usize,
    pub seed: u64,
}

impl NetworkSpec {
    pub const DEFAULT_INPUT_SIDE: usize = 64;
    pub const DEFAULT_SEED: u64 = 7;

    /// Default architecture: 64x64 input, 3x3 kernels, channels
    /// (32, 32), (64, 64), (128, 128), 256 hidden units.
    pub fn with_landmarks(n_landmarks: usize) -> Self {
        Self {
            input_side: Self::DEFAULT_INPUT_SIDE,
            n_landmarks,
            groups: vec![
                GroupSpec::new(3, 32, 32),
                GroupSpec::new(3, 64, 64),
                GroupSpec::new(3, 128, 128),
            ],
            fc_hidden: 256,
            seed: Self::DEFAULT_SEED,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_landmarks
    }

    /// Spatial side after the last pooling layer.
    pub fn final_side(&self) -> usize {
        self.input_side >> self.groups.len()
    }

    pub fn flat_features(&self) -> usize {
        let c = self.groups.last().map_or(1, |g| g.channels_conv2);
        c * self.final_side() * self.final_side()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.groups.len() != GROUP_COUNT {
            problems.push(format!(
                "exactly {GROUP_COUNT} groups required, got {}",
                self.groups.len()
            ));
        }
        if self.n_landmarks == 0 {
            problems.push("n_landmarks must be >= 1".into());
        }
        if self.fc_hidden == 0 {
            problems.push("fc_hidden must be >= 1".into());
        }
        let mut side = self.input_side;
        if side == 0 {
            problems.push("input_side must be >= 1".into());
        }
        for (i, g) in self.groups.iter().enumerate() {
            let n = i + 1;
            if g.kernel_size == 0 || g.kernel_size % 2 == 0 {
                problems.push(format!(
                    "group {n}: kernel size {} must be odd (same padding)",
                    g.kernel_size
                ));
            }
            if g.channels_conv1 == 0 || g.channels_conv2 == 0 {
                problems.push(format!("group {n}: channel counts must be >= 1"));
            }
            if side == 0 || !side.is_multiple_of(2) {
                problems.push(format!(
                    "group {n}: spatial size {side} is not divisible by 2 at pooling"
                ));
            }
            side /= 2;
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidSpec(problems))
        }
    }

    /// `key=value` lines, the same text embedded in weight files.
    pub fn to_manifest(&self) -> String {
        let mut s = format!(
            "input_side={}\nn_landmarks={}\n",
            self.input_side, self.n_landmarks
        );
        for g in &self.groups {
            s += &format!(
                "group={},{},{}\n",
                g.kernel_size, g.channels_conv1, g.channels_conv2
            );
        }
        s += &format!("fc_hidden={}\nseed={}\n", self.fc_hidden, self.seed);
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self, String> {
        let mut input_side = None;
        let mut n_landmarks = None;
        let mut fc_hidden = None;
        let mut seed = None;
        let mut groups = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| format!("line {}: invalid number {v:?}", n + 1))
            };
            match key.trim() {
                "input_side" => input_side = Some(num(value)? as usize),
                "n_landmarks" => n_landmarks = Some(num(value)? as usize),
                "fc_hidden" => fc_hidden = Some(num(value)? as usize),
                "seed" => seed = Some(num(value)?),
                "group" => {
                    let parts: Vec<usize> = value
                        .split(',')
                        .map(|v| num(v).map(|x| x as usize))
                        .collect::<Result<_, _>>()?;
                    let [k, c1, c2] = parts[..] else {
                        return Err(format!("line {}: group needs k,c1,c2", n + 1));
                    };
                    groups.push(GroupSpec::new(k, c1, c2));
                }
                other => return Err(format!("line {}: unknown key {other:?}", n + 1)),
            }
        }
        let missing = |k: &str| format!("missing key {k}");
        Ok(NetworkSpec {
            input_side: input_side.ok_or_else(|| missing("input_side"))?,
            n_landmarks: n_landmarks.ok_or_else(|| missing("n_landmarks"))?,
            groups,
            fc_hidden: fc_hidden.ok_or_else(|| missing("fc_hidden"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        })
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} input, groups [", self.input_side, self.input_side)?;
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(
                f,
                "k{} {}/{}",
                g.kernel_size, g.channels_conv1, g.channels_conv2
            )?;
        }
        write!(
            f,
            "], fc {}, {} landmarks",
            self.fc_hidden, self.n_landmarks
        )
    }
}
