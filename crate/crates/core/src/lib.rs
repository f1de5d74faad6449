//! Single-network facial landmark regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`nn`]: a dense `f32` tensor plus convolution, 2x2 max-pooling,
//!   tanh and fully-connected layers with exact backward passes and SGD.
//! - [`model`]: the three-group network (conv, conv, pool per group, then two
//!   fully-connected layers), its loss, gradients, receptive field and weight files.
//! - [`dataset`]: pts annotations, manifests, grayscale images and normalized crops.
//! - [`augment`]: the three augmentation stages and hard-example selection.
//! - [`train`]: learning-rate policies, the mini-batch loop and stage chaining.
//! - [`eval`]: inter-ocular normalized error, failure rate, CED curves and latency.
//!
//! Batch-level work (per-sample forward/backward, per-source augmentation,
//! per-image evaluation) goes through [`par`], which uses rayon when the
//! `parallel` feature is enabled and always reduces results in input order.

pub mod augment;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod landmarks;
pub mod model;
pub mod nn;
pub mod par;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use geometry::{Affine2, BBox, Point};
pub use landmarks::{CoordinateFrame, LandmarkSet};
pub use tensor::{Tensor, TensorError};
