//! Redundancy analysis for small convolutional networks.
//!
//! The crate trains LeNet-style classifiers from scratch and then probes
//! them in two ways: perturbing one channel of a layer's input (shuffling it
//! across the mini-batch, or shuffling its pixels) and measuring how much the
//! next layer's activation moves, and feeding a unit impulse through the
//! trained network to compare the per-kernel responses with normalized
//! cross-correlation.
//!
//! Module map:
//!
//! * [`tensor`], [`layers`]: dense rank-4 tensors and the hand-wired layer
//!   primitives (forward and backward).
//! * [`data`]: IDX parsing and deterministic batching.
//! * [`model`], [`checkpoint`]: network topologies and persistence.
//! * [`train`]: SGD training and evaluation.
//! * [`perturb`]: channel/pixel shuffling and perturbed forward passes.
//! * [`impulse`]: unit impulse responses and the cascade order check.
//! * [`metrics`]: cosine similarity, NCC, one-vs-all matrices.
//! * [`report`]: JSON/CSV report bundles and cross-network comparison.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod impulse;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, IdxError, Result};
pub use exec::Execution;
pub use tensor::{Dims4, Map2d, Tensor4};
