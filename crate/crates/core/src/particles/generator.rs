//! Synthetic dissipative particle dynamics: gravity, short-range pairwise
//! repulsion, per-step velocity damping and inelastic walls, integrated
//! with symplectic Euler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bounds, Trajectory};
use crate::graph::build_radius_graph;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyGenConfig {
    pub dims: usize,
    pub n_particles: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    /// Connectivity radius recorded in the trajectory for the model graph.
    pub radius: f64,
    pub gravity: Vec<f64>,
    /// Fraction of velocity removed each step.
    pub damping: f64,
    pub repulsion_stiffness: f64,
    pub repulsion_radius: f64,
    /// Fraction of wall-normal speed kept on a bounce.
    pub restitution: f64,
    /// Scale of the random initial bulk velocity.
    pub initial_speed: f64,
    pub seed: u64,
}

impl Default for ToyGenConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            n_particles: 150,
            n_steps: 200,
            dt: 0.0025,
            box_lo: vec![0.0, 0.0],
            box_hi: vec![1.0, 1.0],
            radius: 0.05,
            gravity: vec![0.0, -4.0],
            damping: 0.01,
            repulsion_stiffness: 400.0,
            repulsion_radius: 0.03,
            restitution: 0.3,
            initial_speed: 1.0,
            seed: 0,
        }
    }
}

impl ToyGenConfig {
    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.box_lo.clone(), self.box_hi.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bounds()?;
        if b.dims() != self.dims || self.gravity.len() != self.dims {
            return Err(Error::Config("dims, box and gravity must agree".into()));
        }
        if self.n_particles == 0 || self.n_steps == 0 {
            return Err(Error::Config("need at least one particle and one step".into()));
        }
        if !(self.dt > 0.0) || !(self.radius > 0.0) || !(self.repulsion_radius > 0.0) {
            return Err(Error::Config("dt, radius and repulsion_radius must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(0.0..1.0).contains(&self.restitution) {
            return Err(Error::Config(format!(
                "restitution must lie in [0, 1), got {}",
                self.restitution
            )));
        }
        if self.repulsion_stiffness < 0.0 {
            return Err(Error::Config("repulsion stiffness must be >= 0".into()));
        }
        Ok(())
    }
}

/// Runs the toy dynamics from a seeded random block of particles.
pub fn generate_trajectory(cfg: &ToyGenConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (pos, vel) = initial_block(cfg, &mut rng)?;
    integrate(cfg, pos, vel)
}

/// Integrates from explicit initial positions and velocities (`N x D` each).
pub fn integrate_from(cfg: &ToyGenConfig, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Trajectory> {
    cfg.validate()?;
    if positions.len() != cfg.n_particles * cfg.dims || velocities.len() != positions.len() {
        return Err(Error::Config("initial state shape mismatch".into()));
    }
    integrate(cfg, positions, velocities)
}

fn initial_block(cfg: &ToyGenConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = cfg.dims;
    let spacing = 0.9 * cfg.repulsion_radius;
    let root = (cfg.n_particles as f64).powf(1.0 / d as f64);
    // vary the aspect ratio so blobs differ between seeds
    let stretch = rng.random_range(0.7..1.4);
    let mut shape = vec![root.ceil() as usize; d];
    shape[0] = (root * stretch).ceil().max(1.0) as usize;
    let others: usize = shape[2..].iter().product();
    shape[1] = cfg.n_particles.div_ceil(shape[0] * others).max(1);
    let margin = 2.0 * spacing;
    let mut origin = vec![0.0; d];
    for a in 0..d {
        let extent = (shape[a] as f64 - 1.0) * spacing;
        let lo = cfg.box_lo[a] + margin;
        let hi = cfg.box_hi[a] - margin - extent;
        if hi < lo {
            return Err(Error::Config(format!(
                "initial block of {} particles does not fit the box on axis {a}",
                cfg.n_particles
            )));
        }
        origin[a] = if hi > lo { rng.random_range(lo..hi) } else { lo };
    }
    let mut pos = Vec::with_capacity(cfg.n_particles * d);
    let mut idx = vec![0usize; d];
    for _ in 0..cfg.n_particles {
        for a in 0..d {
            let jitter = rng.random_range(-0.1..0.1) * spacing;
            pos.push(origin[a] + idx[a] as f64 * spacing + jitter);
        }
        for a in 0..d {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let bulk: Vec<f64> = (0..d)
        .map(|_| rng.random_range(-1.0..1.0) * cfg.initial_speed)
        .collect();
    let mut vel = Vec::with_capacity(pos.len());
    for _ in 0..cfg.n_particles {
        for b in &bulk {
            vel.push(b + rng.random_range(-0.05..0.05) * cfg.initial_speed);
        }
    }
    Ok((pos, vel))
}

fn integrate(cfg: &ToyGenConfig, mut pos: Vec<f64>, mut vel: Vec<f64>) -> Result<Trajectory> {
    let d = cfg.dims;
    let n = cfg.n_particles;
    let bounds = cfg.bounds()?;
    let mut frames = Vec::with_capacity(cfg.n_steps * n * d);
    clamp_into(&bounds, &mut pos, &mut vel, cfg.restitution);
    push_frame(&bounds, &pos, &mut frames);
    let mut acc = vec![0.0; n * d];
    for step in 1..cfg.n_steps {
        accelerations(cfg, &pos, &mut acc)?;
        for i in 0..n * d {
            vel[i] = (vel[i] + cfg.dt * acc[i]) * (1.0 - cfg.damping);
            pos[i] += cfg.dt * vel[i];
        }
        for (i, p) in pos.chunks(d).enumerate() {
            for a in 0..d {
                let width = cfg.box_hi[a] - cfg.box_lo[a];
                let x = p[a];
                if !x.is_finite() || x < cfg.box_lo[a] - width || x > cfg.box_hi[a] + width {
                    return Err(Error::Generation {
                        step,
                        message: format!("particle {i} escaped the box on axis {a} (x = {x})"),
                    });
                }
            }
        }
        clamp_into(&bounds, &mut pos, &mut vel, cfg.restitution);
        push_frame(&bounds, &pos, &mut frames);
    }
    Trajectory::new(cfg.dt, cfg.radius, bounds, vec![0; n], frames, cfg.n_steps)
}

fn accelerations(cfg: &ToyGenConfig, pos: &[f64], acc: &mut [f64]) -> Result<()> {
    let d = cfg.dims;
    for chunk in acc.chunks_mut(d) {
        chunk.copy_from_slice(&cfg.gravity);
    }
    if cfg.repulsion_stiffness == 0.0 {
        return Ok(());
    }
    let graph = build_radius_graph(pos, d, cfg.repulsion_radius)?;
    for &(i, j) in &graph.edges {
        let pi = &pos[i * d..(i + 1) * d];
        let pj = &pos[j * d..(j + 1) * d];
        let dist = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        let mag = cfg.repulsion_stiffness * (1.0 - dist / cfg.repulsion_radius);
        for a in 0..d {
            acc[i * d + a] += mag * (pi[a] - pj[a]) / dist;
        }
    }
    Ok(())
}

fn clamp_into(bounds: &Bounds, pos: &mut [f64], vel: &mut [f64], restitution: f64) {
    let d = bounds.dims();
    for (p, v) in pos.chunks_mut(d).zip(vel.chunks_mut(d)) {
        for a in 0..d {
            if p[a] < bounds.lo[a] {
                p[a] = bounds.lo[a];
                if v[a] < 0.0 {
                    v[a] *= -restitution;
                }
            } else if p[a] > bounds.hi[a] {
                p[a] = bounds.hi[a];
                if v[a] > 0.0 {
                    v[a] *= -restitution;
                }
            }
        }
    }
}

fn push_frame(bounds: &Bounds, pos: &[f64], frames: &mut Vec<f32>) {
    let d = bounds.dims();
    for (k, &x) in pos.iter().enumerate() {
        let a = k % d;
        frames.push(to_f32_within(x, bounds.lo[a], bounds.hi[a]));
    }
}

/// Rounds to `f32` without leaving `[lo, hi]`.
fn to_f32_within(x: f64, lo: f64, hi: f64) -> f32 {
    let mut y = x as f32;
    while (y as f64) > hi {
        y = f32::from_bits(if y > 0.0 { y.to_bits() - 1 } else { y.to_bits() + 1 });
    }
    while (y as f64) < lo {
        y = f32::from_bits(if y >= 0.0 { y.to_bits() + 1 } else { y.to_bits() - 1 });
    }
    y
}

/// `sum_i 0.5 |v_i|^2` for one `N x D` velocity frame (unit masses).
pub fn kinetic_energy(velocities: &[f64]) -> f64 {
    0.5 * velocities.iter().map(|v| v * v).sum::<f64>()
}

/// Kinetic plus gravitational plus repulsion potential energy.
pub fn total_energy(cfg: &ToyGenConfig, positions: &[f64], velocities: &[f64]) -> f64 {
    let d = cfg.dims;
    let n = positions.len() / d;
    let mut e = kinetic_energy(velocities);
    for p in positions.chunks(d) {
        e -= p.iter().zip(&cfg.gravity).map(|(x, g)| x * g).sum::<f64>();
    }
    let r0 = cfg.repulsion_radius;
    for i in 0..n {
        for j in i + 1..n {
            let dist = (0..d)
                .map(|a| (positions[i * d + a] - positions[j * d + a]).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist < r0 {
                e += 0.5 * cfg.repulsion_stiffness * r0 * (1.0 - dist / r0).powi(2);
            }
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(gravity: Vec<f64>, damping: f64) -> ToyGenConfig {
        ToyGenConfig {
            n_particles: 1,
            n_steps: 40,
            gravity,
            damping,
            ..ToyGenConfig::default()
        }
    }

    #[test]
    fn resting_particle_stays_on_floor() {
        let cfg = single(vec![0.0, -9.8], 0.0);
        let t = integrate_from(&cfg, vec![0.4, 0.0], vec![0.0, 0.0]).unwrap();
        for s in 0..cfg.n_steps {
            assert_eq!(t.position(s, 0), &[0.4f32, 0.0][..]);
        }
    }

    #[test]
    fn free_fall_matches_recurrence() {
        let cfg = single(vec![0.0, -9.8], 0.0);
        let t = integrate_from(&cfg, vec![0.5, 0.9], vec![0.1, 0.0]).unwrap();
        // standalone symplectic Euler recurrence
        let (mut x, mut y, mut vx, mut vy) = (0.5f64, 0.9f64, 0.1f64, 0.0f64);
        for s in 1..cfg.n_steps {
            vy += cfg.dt * -9.8;
            vx += 0.0;
            x += cfg.dt * vx;
            y += cfg.dt * vy;
            assert!(y > 0.0, "oracle is only valid before contact");
            assert_eq!(t.position(s, 0), &[x as f32, y as f32][..], "step {s}");
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        let cfg = ToyGenConfig {
            damping: 1.0,
            ..ToyGenConfig::default()
        };
        assert!(matches!(generate_trajectory(&cfg), Err(Error::Config(_))));
        let cfg = ToyGenConfig {
            restitution: 1.0,
            ..ToyGenConfig::default()
        };
        assert!(matches!(generate_trajectory(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let cfg = ToyGenConfig {
            n_particles: 1,
            n_steps: 10,
            dt: 0.5,
            gravity: vec![0.0, -1e4],
            ..ToyGenConfig::default()
        };
        let err = integrate_from(&cfg, vec![0.5, 0.5], vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Generation { step: 1, .. }), "{err}");
    }

    #[test]
    fn f32_rounding_stays_inside() {
        let hi = 0.1f64;
        let y = to_f32_within(0.1, 0.0, hi);
        assert!((y as f64) <= hi);
        let lo = 0.3f64;
        assert!((to_f32_within(0.3, lo, 1.0) as f64) >= lo);
    }
}
