//! Reversible graph-network particle simulator.
//!
//! One shared parameter set drives both the forward operator (predict the
//! next state) and its exact inverse (recover the previous state). The model
//! is an invertible linear projection codec wrapped around a stack of
//! reversible message-passing coupling layers conditioned on fixed edge
//! latents.
//!
//! Module map:
//! - [`numerics`]: dense matrices, batched MLPs with explicit gradients,
//!   Jacobi SVD pseudo-inverse, Adam with cosine decay.
//! - [`particles`]: trajectories, the binary trajectory format, the toy
//!   dissipative generator, velocity windows.
//! - [`graph`]: cell-list radius graphs and node/edge feature assembly.
//! - [`ilp`]: the invertible linear codec (plus the MLP ablation codec) and
//!   the edge encoder.
//! - [`rrmp`]: reversible message-passing layers, stack inverse, and the
//!   recompute-based backward pass.
//! - [`simulator`]: forward/inverse steps, rollouts, goal conditioning.
//! - [`training`]: supervision windows, bidirectional loss, the optimizer
//!   loop, checkpoints.
//! - [`eval`]: rollout/consistency MSE, optimal transport, MMD, letter
//!   targets, metric reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod graph;
pub mod ilp;
pub mod numerics;
pub mod particles;
pub mod rrmp;
pub mod selftest;
pub mod simulator;
pub mod training;

mod bytes;

pub use error::{Error, Result};
pub use graph::{Normalizer, RadiusGraph};
pub use ilp::{Codec, CodecMode, IlpParams};
pub use numerics::{Activation, AdamConfig, AdamState, Matrix, MlpParams, Precision, Real};
pub use particles::{Bounds, Lattice, StepState, ToyGenConfig, Trajectory};
pub use rrmp::{Direction, EdgeMode, LatentNodes, RrmpLayer, RrmpStack};
pub use simulator::{ModelConfig, ModelParams, RolloutDirection, RolloutResult};
pub use training::{Checkpoint, LossMode, TrainConfig};
