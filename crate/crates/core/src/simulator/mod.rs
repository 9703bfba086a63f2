//! Forward and inverse stepping, rollouts in both directions, and the
//! goal-conditioned pipeline.
//!
//! A forward step predicts only the newest velocity of the next window; the
//! other slots are copied from the input. An inverse step recovers the
//! previous positions from the newest known velocity, rebuilds the same graph,
//! runs the stack backwards and predicts only the oldest velocity.
//!
//! Positions and displacements live on a dyadic [`Lattice`](crate::Lattice),
//! so `p + dt*v` followed by `- dt*v` is exact. A displacement that would
//! leave the box is cancelled on that axis and the stored velocity component
//! is zeroed.

mod model;
mod step;

pub use model::{ModelConfig, ModelParams};
pub use step::{
    consistency_mse, forward_step, goal_condition, inverse_rollout, inverse_step, position_mse, rollout,
    GoalResult, RolloutDirection, RolloutResult, StepDiagnostics,
};
