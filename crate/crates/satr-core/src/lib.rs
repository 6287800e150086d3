//! Core library for a dual-head convolutional/recurrent classifier over
//! multi-channel kinematic time series.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`tensor`] / [`tape`] / [`layers`]: dense arrays, layer primitives,
//!   and tape-based reverse-mode differentiation.
//! - [`model`]: the parallel conv + GRU dual-head network, its parameters,
//!   joint loss, and checkpoints.
//! - [`data`]: trial ingestion, synthetic corpus generation, normalization,
//!   sliding windows, and leave-one-supertrial-out fold construction.
//! - [`training`]: Adam with plateau learning-rate decay and best-model
//!   selection.
//! - [`eval`]: interval- and trial-level metrics, cross-validation
//!   orchestration, and report emission.
//!
//! Batch-level operations fan out over rayon when the `parallel` feature
//! (default) is enabled; all reductions run in a fixed order, so results are
//! bit-identical to the sequential build.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod layers;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use layers::LayerMode;
pub use tape::{GradientTape, Gradients, NodeId};
pub use tensor::Tensor;

/// The deterministic RNG used everywhere a seed appears in the public API.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Derive an independent stream seed from a base seed and a stream tag
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
