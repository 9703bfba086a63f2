use crate::particles::{compute_velocities, state_from_trajectory, StepState, Trajectory};
use crate::Result;

/// Location of one supervision sample: trajectory index and frame `t`
/// (0-based). The sample needs `v^{t-k+1}` through `v^{t+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub traj: usize,
    pub t: usize,
}

/// A materialised supervision sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub at: SampleRef,
    /// Positions `p^t` and window `(v^{t-k+1}, ..., v^t)`.
    pub state: StepState,
    /// Forward target `v^{t+1}`.
    pub next_velocity: Vec<f64>,
    /// Inverse target `v^{t-k+1}`.
    pub oldest_velocity: Vec<f64>,
}

/// Valid frames are `t = k ..= T-2`: `T - 1 - k` samples per trajectory.
/// Trajectories too short for one sample are skipped with a warning.
pub fn sample_refs(trajectories: &[Trajectory], k: usize) -> Vec<SampleRef> {
    let mut out = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        if traj.n_steps < k + 2 {
            log::warn!(
                "trajectory {i} has {} frames, needs at least {} for history {k}; skipped",
                traj.n_steps,
                k + 2
            );
            continue;
        }
        out.extend((k..=traj.n_steps - 2).map(|t| SampleRef { traj: i, t }));
    }
    out
}

pub fn materialize(trajectories: &[Trajectory], at: SampleRef, k: usize) -> Result<WindowSample> {
    let traj = &trajectories[at.traj];
    let state = state_from_trajectory(traj, at.t, k)?;
    let next = state_from_trajectory(traj, at.t + 1, k)?;
    Ok(WindowSample {
        at,
        oldest_velocity: state.window[0].clone(),
        next_velocity: next.newest().to_vec(),
        state,
    })
}

/// Every supervision sample, in trajectory-then-time order.
pub fn make_windows(trajectories: &[Trajectory], k: usize) -> Result<Vec<WindowSample>> {
    sample_refs(trajectories, k)
        .into_iter()
        .map(|at| materialize(trajectories, at, k))
        .collect()
}

/// All velocity frames of all trajectories, for fitting a normalizer.
pub(crate) fn all_velocities(trajectories: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for t in trajectories {
        if t.n_steps >= 2 {
            out.extend(compute_velocities(t)?);
        }
    }
    Ok(out)
}
