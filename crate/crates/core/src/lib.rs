//! Relational autoencoders.
//!
//! Tied-weight sigmoid autoencoders trained by minibatch SGD on objectives
//! that reconstruct both the data and the pairwise inner-product structure
//! of each batch, with sparse, denoising and variational variants, and the
//! loaders and evaluation harness used to compare them.

pub mod corruption;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradient;
pub mod matrix;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod softmax;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{init_network, plan_layers, Network};
pub use objectives::{LossValue, ObjectiveKind, ObjectiveSpec};
pub use rng::Rng;
