//! Rollout and consistency errors, distribution distances between particle
//! sets, letter-shaped goal targets and the aggregated metric report.

mod mmd;
mod ot;
mod target;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use mmd::{median_bandwidth, mmd, MmdEstimator};
pub use ot::{assignment, assignment_cost, cost_matrix, ot_distance, sinkhorn, EXACT_OT_LIMIT, SINKHORN_EPSILON, SINKHORN_ITERS};
pub use target::{rasterize_target, Mask};

use crate::numerics::Real;
use crate::particles::{state_from_trajectory, Trajectory};
use crate::simulator::{consistency_mse, position_mse, rollout, ModelParams, RolloutResult};
use crate::{Error, Result};

/// Mean squared position error of `pred.frames[1..]` against the ground-truth
/// frames `t0 + 1 ..= t0 + K`.
pub fn rollout_mse(pred: &RolloutResult, truth: &Trajectory, t0: usize) -> Result<f64> {
    let k = pred.steps();
    if t0 + k >= truth.n_steps {
        return Err(Error::Config(format!(
            "rollout of {k} steps from t={t0} runs past the {} ground-truth frames",
            truth.n_steps
        )));
    }
    let width = truth.n_particles * truth.dims;
    let mut total = 0.0;
    for s in 1..=k {
        let p = &pred.frames[s].positions;
        if p.len() != width {
            return Err(Error::Config("predicted frame size does not match ground truth".into()));
        }
        total += position_mse(p, &truth.frame_f64(t0 + s))?;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Start frame of forward rollouts; `None` means the history length.
    pub start: Option<usize>,
    pub rollout_steps: usize,
    pub consistency_steps: Vec<usize>,
    /// Frame used for consistency; `None` means the middle frame.
    pub consistency_frame: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            start: None,
            rollout_steps: 100,
            consistency_steps: vec![10, 20, 40],
            consistency_frame: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rollout_mse: f64,
    /// Keyed by `K` as a decimal string.
    pub consistency: BTreeMap<String, f64>,
    /// Exact-assignment OT between predicted and true final frames.
    pub ot: f64,
    /// Biased squared MMD between predicted and true final frames.
    pub mmd: f64,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

/// Averages every metric over `trajectories`.
pub fn evaluate<T: Real>(model: &ModelParams<T>, trajectories: &[Trajectory], cfg: &EvalConfig) -> Result<MetricReport> {
    if trajectories.is_empty() {
        return Err(Error::InsufficientData("evaluation needs at least one trajectory".into()));
    }
    let k = model.config.history;
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut tick = |name: &str, start: Instant| {
        *timings.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
    };
    let (mut r_mse, mut ot_sum, mut mmd_sum) = (0.0, 0.0, 0.0);
    let mut cons: BTreeMap<usize, f64> = BTreeMap::new();
    for traj in trajectories {
        let t0 = cfg.start.unwrap_or(k);
        let steps = cfg.rollout_steps.min(traj.n_steps.saturating_sub(t0 + 1));
        if steps == 0 {
            return Err(Error::InsufficientData(format!(
                "trajectory with {} frames is too short to roll out from t={t0}",
                traj.n_steps
            )));
        }
        let clock = Instant::now();
        let state = state_from_trajectory(traj, t0, k)?;
        let pred = rollout(model, &state, steps)?;
        r_mse += rollout_mse(&pred, traj, t0)?;
        tick("rollout", clock);

        let last = &pred.last().positions;
        let truth = traj.frame_f64(t0 + steps);
        let clock = Instant::now();
        ot_sum += ot_distance(last, &truth, traj.dims)?;
        tick("ot", clock);
        let clock = Instant::now();
        mmd_sum += mmd(last, &truth, traj.dims, None, MmdEstimator::Biased)?;
        tick("mmd", clock);

        let tc = cfg.consistency_frame.unwrap_or(traj.n_steps / 2).max(k).min(traj.n_steps - 1);
        let clock = Instant::now();
        let s = state_from_trajectory(traj, tc, k)?;
        for &kk in &cfg.consistency_steps {
            *cons.entry(kk).or_default() += consistency_mse(model, &s, kk)?;
        }
        tick("consistency", clock);
    }
    let n = trajectories.len() as f64;
    Ok(MetricReport {
        rollout_mse: r_mse / n,
        consistency: cons.into_iter().map(|(kk, v)| (kk.to_string(), v / n)).collect(),
        ot: ot_sum / n,
        mmd: mmd_sum / n,
        timings,
    })
}
