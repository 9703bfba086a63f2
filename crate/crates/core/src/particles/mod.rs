//! Trajectory data model, the binary trajectory format, the toy dissipative
//! generator, and velocity-history windows.

mod format;
mod generator;
mod state;
mod trajectory;

pub use format::{decode_trajectory, encode_trajectory, read_trajectory, write_frames_csv, write_trajectory, TRAJECTORY_MAGIC, TRAJECTORY_VERSION};
pub use generator::{generate_trajectory, integrate_from, kinetic_energy, total_energy, ToyGenConfig};
pub use state::{compute_velocities, state_from_trajectory, StepState, DEFAULT_HISTORY};
pub use trajectory::{Bounds, Lattice, Trajectory};
