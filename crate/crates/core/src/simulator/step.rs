use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::graph::{build_radius_graph, edge_features, node_physical, RadiusGraph};
use crate::numerics::{Matrix, Real};
use crate::particles::{Bounds, Lattice, StepState};
use crate::rrmp::{Direction, EdgeLatents, LatentNodes};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutDirection {
    Forward,
    Inverse,
}

/// Per-step record kept by rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// 1-based step number within the rollout.
    pub step: usize,
    /// Time index of the produced frame.
    pub time_index: i64,
    pub n_edges: usize,
    /// Particle-axis pairs whose displacement was cancelled at a wall.
    pub wall_stops: usize,
    /// RMS distance of the latent output from the codec's range, i.e.
    /// `|n - enc(dec(n))|`, per latent entry.
    pub codec_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub direction: RolloutDirection,
    /// `K + 1` frames; `frames[0]` is the starting state.
    pub frames: Vec<StepState>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl RolloutResult {
    pub fn last(&self) -> &StepState {
        self.frames.last().expect("rollouts hold at least the starting frame")
    }

    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }
}

/// Graph and encoded edge latents for a set of positions.
pub(crate) struct Conditioning<T> {
    pub graph: RadiusGraph,
    pub edges: EdgeLatents<T>,
}

pub(crate) fn condition<T: Real>(model: &ModelParams<T>, positions: &[f64]) -> Result<Conditioning<T>> {
    let cfg = &model.config;
    let graph = build_radius_graph(positions, cfg.dims, cfg.radius)?;
    let geom: Matrix<T> = edge_features(&graph, positions, cfg.dims, cfg.radius).cast();
    let joined = model.edge_enc.eval(&geom)?;
    let edges = EdgeLatents::split(&joined)?;
    Ok(Conditioning { graph, edges })
}

pub(crate) fn physical<T: Real>(
    model: &ModelParams<T>,
    state: &StepState,
    positions: &[f64],
    bounds: &Bounds,
) -> Result<Matrix<T>> {
    let cfg = &model.config;
    Ok(node_physical(state, positions, bounds, cfg.radius, &model.normalizer, &cfg.layout())?.cast())
}

/// Encode, run the stack in `direction`, decode.
fn latent_pass<T: Real>(
    model: &ModelParams<T>,
    chi: &Matrix<T>,
    cond: &Conditioning<T>,
    direction: Direction,
) -> Result<(Matrix<T>, f64)> {
    let n = model.codec.encode(chi)?;
    let mut nodes = LatentNodes::split(&n)?;
    let mut edges = cond.edges.clone();
    model.stack.apply(direction, &mut nodes, &mut edges, &cond.graph)?;
    let out = nodes.joined();
    let chi_out = model.codec.decode(&out)?;
    let projected = model.codec.encode(&chi_out)?;
    let count = out.as_slice().len().max(1) as f64;
    let sq: f64 = out
        .as_slice()
        .iter()
        .zip(projected.as_slice())
        .map(|(a, b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum();
    Ok((chi_out, (sq / count).sqrt()))
}

/// Reads slot `cols` of the decoded window as lattice-consistent physical
/// velocities.
fn read_velocity<T: Real>(
    model: &ModelParams<T>,
    chi: &Matrix<T>,
    cols: std::ops::Range<usize>,
    lattice: &Lattice,
    step: usize,
) -> Result<Vec<f64>> {
    let dims = model.config.dims;
    let dt = model.config.dt;
    let mut v = Vec::with_capacity(chi.rows() * dims);
    for i in 0..chi.rows() {
        for (a, z) in chi.row(i)[cols.clone()].iter().enumerate() {
            let x = model.normalizer.denormalize(a, z.to_f64());
            if !x.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: format!("non-finite velocity for particle {i}"),
                });
            }
            v.push(lattice.displacement(x, dt) / dt);
        }
    }
    Ok(v)
}

fn prepare<T: Real>(model: &ModelParams<T>, state: &StepState) -> Result<(Bounds, Lattice, StepState)> {
    let cfg = &model.config;
    state.validate()?;
    if state.dims != cfg.dims {
        return Err(Error::Config(format!(
            "state has {} dims, model expects {}",
            state.dims, cfg.dims
        )));
    }
    let bounds = cfg.bounds()?;
    let lattice = Lattice::for_bounds(&bounds);
    Ok((bounds, lattice, state.clone().snapped(&lattice, cfg.dt)))
}

/// One application of the forward operator.
pub fn forward_step<T: Real>(model: &ModelParams<T>, state: &StepState) -> Result<StepState> {
    forward_step_at(model, state, 1).map(|(s, _)| s)
}

/// One application of the inverse operator.
pub fn inverse_step<T: Real>(model: &ModelParams<T>, state: &StepState) -> Result<StepState> {
    inverse_step_at(model, state, 1).map(|(s, _)| s)
}

pub(crate) fn forward_step_at<T: Real>(
    model: &ModelParams<T>,
    state: &StepState,
    step: usize,
) -> Result<(StepState, StepDiagnostics)> {
    let (bounds, lattice, state) = prepare(model, state)?;
    let cfg = &model.config;
    let layout = cfg.layout();
    let cond = condition(model, &state.positions)?;
    let chi = physical(model, &state, &state.positions, &bounds)?;
    let (chi_out, codec_residual) = latent_pass(model, &chi, &cond, Direction::Forward)?;
    let mut v_new = read_velocity(model, &chi_out, layout.newest(), &lattice, step)?;

    let d = cfg.dims;
    let mut positions = state.positions.clone();
    let mut wall_stops = 0;
    for i in 0..state.n_particles() {
        for a in 0..d {
            let idx = i * d + a;
            let next = positions[idx] + lattice.displacement(v_new[idx], cfg.dt);
            if next < bounds.lo[a] || next > bounds.hi[a] {
                v_new[idx] = 0.0;
                wall_stops += 1;
            } else {
                positions[idx] = next;
            }
        }
    }
    let mut window: Vec<Vec<f64>> = state.window[1..].to_vec();
    window.push(v_new);
    let next = StepState {
        dims: d,
        positions,
        window,
        materials: state.materials.clone(),
        time_index: state.time_index + 1,
    };
    let diag = StepDiagnostics {
        step,
        time_index: next.time_index,
        n_edges: cond.graph.n_edges(),
        wall_stops,
        codec_residual,
    };
    Ok((next, diag))
}

pub(crate) fn inverse_step_at<T: Real>(
    model: &ModelParams<T>,
    state: &StepState,
    step: usize,
) -> Result<(StepState, StepDiagnostics)> {
    let (bounds, lattice, state) = prepare(model, state)?;
    let cfg = &model.config;
    let layout = cfg.layout();
    let d = cfg.dims;

    let newest = state.newest();
    let mut positions = state.positions.clone();
    let mut wall_stops = 0;
    for i in 0..state.n_particles() {
        for a in 0..d {
            let idx = i * d + a;
            let prev = positions[idx] - lattice.displacement(newest[idx], cfg.dt);
            if prev < bounds.lo[a] || prev > bounds.hi[a] {
                wall_stops += 1;
            } else {
                positions[idx] = prev;
            }
        }
    }

    let cond = condition(model, &positions)?;
    let chi = physical(model, &state, &positions, &bounds)?;
    let (chi_out, codec_residual) = latent_pass(model, &chi, &cond, Direction::Inverse)?;
    let v_old = read_velocity(model, &chi_out, layout.oldest(), &lattice, step)?;

    let k = state.history();
    let mut window = Vec::with_capacity(k);
    window.push(v_old);
    window.extend_from_slice(&state.window[..k - 1]);
    let prev = StepState {
        dims: d,
        positions,
        window,
        materials: state.materials.clone(),
        time_index: state.time_index - 1,
    };
    let diag = StepDiagnostics {
        step,
        time_index: prev.time_index,
        n_edges: cond.graph.n_edges(),
        wall_stops,
        codec_residual,
    };
    Ok((prev, diag))
}

/// `K` forward steps from `state0`.
pub fn rollout<T: Real>(model: &ModelParams<T>, state0: &StepState, steps: usize) -> Result<RolloutResult> {
    run(model, state0, steps, RolloutDirection::Forward)
}

/// `K` inverse steps from `state_k`.
pub fn inverse_rollout<T: Real>(model: &ModelParams<T>, state_k: &StepState, steps: usize) -> Result<RolloutResult> {
    run(model, state_k, steps, RolloutDirection::Inverse)
}

fn run<T: Real>(
    model: &ModelParams<T>,
    start: &StepState,
    steps: usize,
    direction: RolloutDirection,
) -> Result<RolloutResult> {
    if steps == 0 {
        return Err(Error::Config("rollout needs steps >= 1".into()));
    }
    let (_, _, first) = prepare(model, start)?;
    let mut frames = Vec::with_capacity(steps + 1);
    let mut diagnostics = Vec::with_capacity(steps);
    frames.push(first);
    for s in 1..=steps {
        let cur = frames.last().expect("non-empty");
        let (next, diag) = match direction {
            RolloutDirection::Forward => forward_step_at(model, cur, s)?,
            RolloutDirection::Inverse => inverse_step_at(model, cur, s)?,
        };
        log::debug!("{direction:?} step {s}: {} edges, residual {:e}", diag.n_edges, diag.codec_residual);
        frames.push(next);
        diagnostics.push(diag);
    }
    Ok(RolloutResult {
        direction,
        frames,
        diagnostics,
    })
}

/// Mean over particles and axes of squared position differences.
pub fn position_mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "position arrays differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sq / a.len() as f64)
}

/// Inferred start state and its reproduction of a target.
#[derive(Debug, Clone)]
pub struct GoalResult {
    pub inferred: StepState,
    pub inverse: Option<RolloutResult>,
    pub reproduced: Option<RolloutResult>,
    /// MSE between the target positions and the reproduced final positions.
    pub consistency_mse: f64,
}

/// Infers a state `K` steps before `target`, then rolls it forward `K` steps.
pub fn goal_condition<T: Real>(model: &ModelParams<T>, target: &StepState, steps: usize) -> Result<GoalResult> {
    if steps == 0 {
        let (_, _, t) = prepare(model, target)?;
        return Ok(GoalResult {
            inferred: t,
            inverse: None,
            reproduced: None,
            consistency_mse: 0.0,
        });
    }
    let inverse = inverse_rollout(model, target, steps)?;
    let inferred = inverse.last().clone();
    let reproduced = rollout(model, &inferred, steps)?;
    let consistency_mse = position_mse(&reproduced.last().positions, &inverse.frames[0].positions)?;
    Ok(GoalResult {
        inferred,
        inverse: Some(inverse),
        reproduced: Some(reproduced),
        consistency_mse,
    })
}

/// Invert `K` steps, roll forward `K` steps, compare positions with `state`.
pub fn consistency_mse<T: Real>(model: &ModelParams<T>, state: &StepState, steps: usize) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Config("consistency needs K >= 1".into()));
    }
    Ok(goal_condition(model, state, steps)?.consistency_mse)
}
