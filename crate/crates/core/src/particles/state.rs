use super::{Lattice, Trajectory};
use crate::{Error, Result};

/// Velocity history length used unless configured otherwise.
pub const DEFAULT_HISTORY: usize = 5;

/// The simulator's working state at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub dims: usize,
    /// `N x D`, particle-major.
    pub positions: Vec<f64>,
    /// `k` velocity frames ordered oldest to newest, each `N x D`.
    pub window: Vec<Vec<f64>>,
    pub materials: Vec<u8>,
    pub time_index: i64,
}

impl StepState {
    pub fn n_particles(&self) -> usize {
        self.materials.len()
    }

    pub fn history(&self) -> usize {
        self.window.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dims..(i + 1) * self.dims]
    }

    pub fn newest(&self) -> &[f64] {
        self.window.last().expect("non-empty window")
    }

    pub fn oldest(&self) -> &[f64] {
        &self.window[0]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.n_particles() * self.dims;
        if self.positions.len() != w {
            return Err(Error::Config("state positions length mismatch".into()));
        }
        if self.window.is_empty() {
            return Err(Error::Config("state needs at least one velocity frame".into()));
        }
        if self.window.iter().any(|v| v.len() != w) {
            return Err(Error::Config("velocity frame length mismatch".into()));
        }
        Ok(())
    }

    /// Resting state: given positions, zero velocity history.
    pub fn at_rest(dims: usize, positions: Vec<f64>, materials: Vec<u8>, k: usize, time_index: i64) -> Self {
        let w = positions.len();
        Self {
            dims,
            positions,
            window: vec![vec![0.0; w]; k],
            materials,
            time_index,
        }
    }

    /// Snaps positions onto `lattice` and makes every window velocity
    /// lattice-consistent (`dt * v` is a lattice multiple).
    pub fn snapped(mut self, lattice: &Lattice, dt: f64) -> Self {
        for p in &mut self.positions {
            *p = lattice.snap(*p);
        }
        for frame in &mut self.window {
            for v in frame.iter_mut() {
                *v = lattice.displacement(*v, dt) / dt;
            }
        }
        self
    }
}

/// Backward-difference velocities `v^t = (p^t - p^{t-1}) / dt` for
/// `t = 1..T`; entry `s` of the result holds `v^{s+1}`.
pub fn compute_velocities(traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    if traj.n_steps < 2 {
        return Err(Error::InsufficientData(format!(
            "velocities need at least 2 frames, trajectory has {}",
            traj.n_steps
        )));
    }
    Ok((1..traj.n_steps).map(|t| frame_velocity(traj, t)).collect())
}

fn frame_velocity(traj: &Trajectory, t: usize) -> Vec<f64> {
    traj.frame(t)
        .iter()
        .zip(traj.frame(t - 1))
        .map(|(&a, &b)| (a as f64 - b as f64) / traj.dt)
        .collect()
}

/// State at time `t` with window `(v^{t-k+1}, ..., v^t)`, snapped onto the
/// trajectory box lattice.
pub fn state_from_trajectory(traj: &Trajectory, t: usize, k: usize) -> Result<StepState> {
    if k == 0 {
        return Err(Error::Config("history length k must be >= 1".into()));
    }
    if t < k {
        return Err(Error::InsufficientData(format!(
            "state at t={t} needs k={k} prior velocities (t >= k)"
        )));
    }
    if t >= traj.n_steps {
        return Err(Error::InsufficientData(format!(
            "t={t} is past the last frame {}",
            traj.n_steps - 1
        )));
    }
    let window = (t + 1 - k..=t).map(|s| frame_velocity(traj, s)).collect();
    let state = StepState {
        dims: traj.dims,
        positions: traj.frame_f64(t),
        window,
        materials: traj.materials.clone(),
        time_index: t as i64,
    };
    Ok(state.snapped(&Lattice::for_bounds(&traj.bounds), traj.dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::Bounds;

    fn linear_traj(c: [f32; 2], steps: usize) -> Trajectory {
        let mut pos = Vec::new();
        for t in 0..steps {
            pos.push(0.125 + c[0] * t as f32);
            pos.push(0.25 + c[1] * t as f32);
        }
        Trajectory::new(0.5, 0.1, Bounds::unit(2), vec![0], pos, steps).unwrap()
    }

    #[test]
    fn constant_positions_zero_velocities() {
        let t = linear_traj([0.0, 0.0], 4);
        for v in compute_velocities(&t).unwrap() {
            assert_eq!(v, vec![0.0, 0.0]);
        }
        let s = state_from_trajectory(&t, 3, 2).unwrap();
        assert!(s.window.iter().all(|w| w.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn uniform_motion_constant_velocity() {
        let t = linear_traj([0.0625, 0.03125], 6);
        for v in compute_velocities(&t).unwrap() {
            assert_eq!(v, vec![0.125, 0.0625]);
        }
        let s = state_from_trajectory(&t, 5, 3).unwrap();
        assert!(s.window.iter().all(|w| w == &s.window[0]));
    }

    #[test]
    fn too_short_trajectories() {
        let t = linear_traj([0.0, 0.0], 1);
        assert!(matches!(compute_velocities(&t), Err(Error::InsufficientData(_))));
        let t = linear_traj([0.0, 0.0], 5);
        assert!(matches!(state_from_trajectory(&t, 2, 3), Err(Error::InsufficientData(_))));
    }
}
