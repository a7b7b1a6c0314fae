//! Scalable high-resolution network for bottom-up multi-person pose
//! estimation: model compiler, cost analysis, CPU inference and decoding.
//!
//! A single coefficient `phi` in `-4..=0` selects the model size. The model
//! is built as a [`graph::LayerGraph`] that is both executed on the CPU and
//! walked by [`analysis`] for parameter and operation counts.

pub mod analysis;
pub mod backbone;
pub mod body;
pub mod decoder;
pub mod error;
pub mod fixture_io;
pub mod graph;
pub mod head;
pub mod kernels;
pub mod network;
mod par;
pub mod reference;
pub mod scaling;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use par::is_parallel;
pub use scaling::{config_for_phi, ScaleConfig};
pub use tensor::{Dims, Tensor};
