use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{prepare_sample, sample_loss, BackwardMode, LossMode, LossOptions, PreparedSample};
use super::windows::{all_velocities, materialize, sample_refs, SampleRef};
use super::Checkpoint;
use crate::graph::Normalizer;
use crate::ilp::CodecMode;
use crate::numerics::{Activation, AdamConfig, AdamState, Real};
use crate::particles::{Trajectory, DEFAULT_HISTORY};
use crate::rrmp::EdgeMode;
use crate::simulator::{ModelConfig, ModelParams};
use crate::{Error, Result};

/// Model shape and optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Velocity history length `k`.
    pub history: usize,
    /// Latent width `d`.
    pub latent: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Reversible layers `M`.
    pub n_layers: usize,
    pub activation: Activation,
    pub residual_scale: f64,
    pub lr0: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Input-velocity noise in normalized units.
    pub noise_std: f64,
    pub loss_mode: LossMode,
    /// Weight of the inverse loss term.
    pub lambda_inverse: f64,
    pub codec_mode: CodecMode,
    pub edge_mode: EdgeMode,
    pub backward_mode: BackwardMode,
    pub seed: u64,
    /// Validation every this many steps.
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Validation samples used per evaluation (evenly spaced).
    pub val_samples: usize,
    /// Training-loss log interval.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            history: DEFAULT_HISTORY,
            latent: 128,
            hidden: 128,
            hidden_layers: 2,
            n_layers: 10,
            activation: Activation::Relu,
            residual_scale: 0.1,
            lr0: 1e-4,
            total_steps: 20_000,
            batch_size: 2,
            noise_std: 1e-3,
            loss_mode: LossMode::Bidirectional,
            lambda_inverse: 1.0,
            codec_mode: CodecMode::Ilp,
            edge_mode: EdgeMode::Fixed,
            backward_mode: BackwardMode::Recompute,
            seed: 0,
            eval_every: 100,
            patience: 10,
            val_samples: 64,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || !self.latent.is_multiple_of(2) {
            return Err(Error::Config(format!("latent width must be even, got {}", self.latent)));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("need at least one reversible layer".into()));
        }
        if self.history == 0 {
            return Err(Error::Config("history must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size, eval_every and log_every must be positive".into()));
        }
        if !(self.lr0 >= 0.0) {
            return Err(Error::Config("lr0 must be >= 0".into()));
        }
        Ok(())
    }

    /// Model configuration for data shaped like `reference`.
    pub fn model_config(&self, trajectories: &[Trajectory]) -> Result<ModelConfig> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InsufficientData("training needs at least one trajectory".into()))?;
        for t in trajectories {
            if t.dims != first.dims || t.dt != first.dt || t.radius != first.radius || t.bounds != first.bounds {
                return Err(Error::Config("trajectories disagree on dims, dt, radius or box".into()));
            }
        }
        let n_materials = trajectories
            .iter()
            .flat_map(|t| t.materials.iter())
            .map(|&m| m as usize + 1)
            .max()
            .unwrap_or(1);
        let cfg = ModelConfig {
            dims: first.dims,
            history: self.history,
            n_materials,
            latent: self.latent,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            n_layers: self.n_layers,
            radius: first.radius,
            dt: first.dt,
            box_lo: first.bounds.lo.clone(),
            box_hi: first.bounds.hi.clone(),
            codec: self.codec_mode,
            edge_mode: self.edge_mode,
            activation: self.activation,
            residual_scale: self.residual_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn loss_options(&self) -> LossOptions {
        LossOptions {
            mode: self.loss_mode,
            lambda: self.lambda_inverse,
            backward: self.backward_mode,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best validation loss.
    pub checkpoint: Checkpoint<T>,
    pub log: Vec<LogRecord>,
    /// One-step forward validation MSE before any update.
    pub initial_val: f64,
    pub best_val: f64,
    pub steps_run: u64,
    pub stopped_early: bool,
}

/// Mean one-step forward MSE (normalized units, no noise) over `samples`.
pub fn validation_loss<T: Real>(
    model: &ModelParams<T>,
    trajectories: &[Trajectory],
    samples: &[SampleRef],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no validation samples".into()));
    }
    let opts = LossOptions {
        mode: LossMode::ForwardOnly,
        ..LossOptions::default()
    };
    let k = model.config.history;
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|&at| -> Result<f64> {
            let s = materialize(trajectories, at, k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let prep = prepare_sample(model, &s, 0.0, &mut rng)?;
            Ok(sample_loss(model, &prep, &opts, false)?.0.forward)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Evenly spaced subset of at most `n` entries.
pub(crate) fn spread<X: Copy>(items: &[X], n: usize) -> Vec<X> {
    if items.len() <= n {
        return items.to_vec();
    }
    (0..n).map(|i| items[i * items.len() / n]).collect()
}

/// Fits the normalizer, initialises a model and optimises it.
///
/// `val` may be empty, in which case validation uses a fixed subset of the
/// training samples. Log records are also written as JSON lines to `log_sink`.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(train_set)?;
    let velocities = all_velocities(train_set)?;
    let normalizer = Normalizer::fit(model_cfg.dims, velocities.iter().map(|v| v.as_slice()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ModelParams::<T>::init(model_cfg, normalizer, &mut rng)?;
    train_from(cfg, model, train_set, val_set, &mut rng, log_sink)
}

fn train_from<T: Real>(
    cfg: &TrainConfig,
    mut model: ModelParams<T>,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    rng: &mut ChaCha8Rng,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome<T>> {
    let k = cfg.history;
    let samples = sample_refs(train_set, k);
    if samples.is_empty() {
        return Err(Error::InsufficientData("no trajectory is long enough to train on".into()));
    }
    let (val_trajs, val_refs) = if val_set.is_empty() {
        (train_set, spread(&samples, cfg.val_samples))
    } else {
        (val_set, spread(&sample_refs(val_set, k), cfg.val_samples))
    };

    let shapes: Vec<usize> = model.named_tensors().iter().map(|(_, t)| t.len()).collect();
    let adam_cfg = AdamConfig {
        lr0: cfg.lr0,
        total_steps: cfg.total_steps,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &shapes)?;
    let opts = cfg.loss_options();

    let initial_val = if val_refs.is_empty() {
        f64::NAN
    } else {
        validation_loss(&model, val_trajs, &val_refs)?
    };
    let mut best_val = initial_val;
    let mut best = model.clone();
    let mut stale_evals = 0usize;
    let mut log = Vec::new();
    let mut emit = |rec: LogRecord, sink: &mut Option<&mut dyn Write>| -> Result<()> {
        if let Some(w) = sink.as_deref_mut() {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        log.push(rec);
        Ok(())
    };
    emit(
        LogRecord {
            step: 0,
            lr: cfg.lr0,
            train_loss: None,
            val_loss: Some(initial_val),
        },
        &mut log_sink,
    )?;

    let mut window_loss = 0.0;
    let mut window_count = 0usize;
    let mut steps_run = 0;
    let mut stopped_early = false;
    for step in 0..cfg.total_steps {
        let batch: Vec<(SampleRef, u64)> = (0..cfg.batch_size)
            .map(|_| (samples[rng.random_range(0..samples.len())], rng.random()))
            .collect();
        let results: Vec<(f64, ModelParams<T>)> = batch
            .par_iter()
            .map(|&(at, seed)| -> Result<(f64, ModelParams<T>)> {
                let s = materialize(train_set, at, k)?;
                let mut srng = ChaCha8Rng::seed_from_u64(seed);
                let prep: PreparedSample<T> = prepare_sample(&model, &s, cfg.noise_std, &mut srng)?;
                let (v, g) = sample_loss(&model, &prep, &opts, true).map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("{m} (trajectory {}, t={})", at.traj, at.t)),
                    other => other,
                })?;
                Ok((v.total, g.expect("gradient requested")))
            })
            .collect::<Result<_>>()?;
        let mut grad = model.zeros_like();
        let scale = T::from_f64(1.0 / cfg.batch_size as f64);
        let mut batch_loss = 0.0;
        for (loss, g) in &results {
            grad.axpy(scale, g);
            batch_loss += loss;
        }
        batch_loss /= cfg.batch_size as f64;
        let grad_views: Vec<&[T]> = grad.named_tensors().into_iter().map(|(_, t)| t).collect();
        let lr = adam.update(&mut model.tensors_mut(), &grad_views, step)?;
        model.after_update()?;
        steps_run = step + 1;
        window_loss += batch_loss;
        window_count += 1;

        let at_eval = steps_run % cfg.eval_every == 0 && !val_refs.is_empty();
        let at_log = steps_run % cfg.log_every == 0;
        if at_eval || at_log || steps_run == cfg.total_steps {
            let val = if at_eval {
                Some(validation_loss(&model, val_trajs, &val_refs)?)
            } else {
                None
            };
            let train_loss = (window_count > 0).then(|| window_loss / window_count as f64);
            window_loss = 0.0;
            window_count = 0;
            log::info!("step {steps_run}: lr {lr:.3e} train {train_loss:?} val {val:?}");
            emit(
                LogRecord {
                    step: steps_run,
                    lr,
                    train_loss,
                    val_loss: val,
                },
                &mut log_sink,
            )?;
            if let Some(v) = val {
                if v < best_val || best_val.is_nan() {
                    best_val = v;
                    best = model.clone();
                    stale_evals = 0;
                } else {
                    stale_evals += 1;
                    if stale_evals >= cfg.patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if val_refs.is_empty() {
        best = model;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            train: cfg.clone(),
            model: best,
            step: steps_run,
        },
        log,
        initial_val,
        best_val,
        steps_run,
        stopped_early,
    })
}
