//! Layer primitives with hand-written backward passes.
//!
//! All layers work on a single sample laid out `[channels, height, width]`
//! (or a flat vector for the fully-connected layer); batching lives in
//! [`crate::model`]. Storage is `f32`, dot products accumulate in `f64`.

mod activation;
mod conv;
mod gradcheck;
mod linear;
mod pool;
mod sgd;

pub use activation::{tanh_activation, tanh_grad, TANH_LIMIT};
pub use conv::{conv2d, conv2d_grad, ConvParams};
pub use gradcheck::{numeric_gradient, relative_error};
pub use linear::{fc_grad, fully_connected, FcParams};
pub use pool::{maxpool2x2, maxpool2x2_grad, ArgmaxRecord};
pub use sgd::{sgd_momentum_update, sgd_update};

use crate::tensor::Tensor;

/// Gradients of a parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
    pub d_input: Tensor,
}
