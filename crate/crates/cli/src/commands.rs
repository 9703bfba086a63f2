use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rgns_core::eval::{evaluate, rasterize_target, EvalConfig, Mask};
use rgns_core::particles::{
    generate_trajectory, read_trajectory, state_from_trajectory, write_frames_csv, write_trajectory,
};
use rgns_core::selftest::run_selftest;
use rgns_core::simulator::{self, goal_condition, inverse_rollout, position_mse};
use rgns_core::training::{checkpoint_precision, train as run_training};
use rgns_core::{Checkpoint, Error, Precision, Real, Result, ToyGenConfig, TrainConfig, Trajectory};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{EvalArgs, GenArgs, GoalArgs, Globals, RolloutArgs, TrainArgs};

fn read_toml<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json<S: Serialize>(value: &S) -> Result<Value> {
    serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn globals_json(g: &Globals, precision: Precision) -> Value {
    json!({ "seed": g.seed, "threads": g.threads, "precision": precision })
}

/// Trajectory files in `dir`, sorted by name.
fn list_trajectories(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rgns"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no .rgns files in {}", dir.display())));
    }
    Ok(files)
}

fn load_dir(dir: &Path) -> Result<Vec<Trajectory>> {
    list_trajectories(dir)?.iter().map(read_trajectory).collect()
}

enum Loaded {
    Single(Checkpoint<f32>),
    Double(Checkpoint<f64>),
}

fn recast<T: Real, U: Real>(ck: Checkpoint<T>) -> Checkpoint<U> {
    Checkpoint {
        train: ck.train,
        model: ck.model.cast(),
        step: ck.step,
    }
}

fn load_checkpoint(path: &Path, want: Option<Precision>) -> Result<Loaded> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let stored = checkpoint_precision(&buf)?;
    let loaded = match stored {
        Precision::Single => Loaded::Single(Checkpoint::from_bytes(&buf)?),
        Precision::Double => Loaded::Double(Checkpoint::from_bytes(&buf)?),
    };
    Ok(match (loaded, want) {
        (Loaded::Single(c), Some(Precision::Double)) => Loaded::Double(recast(c)),
        (Loaded::Double(c), Some(Precision::Single)) => Loaded::Single(recast(c)),
        (l, _) => l,
    })
}

macro_rules! with_checkpoint {
    ($loaded:expr, $f:ident ( $($arg:expr),* )) => {
        match $loaded {
            Loaded::Single(c) => $f(&c, Precision::Single, $($arg),*),
            Loaded::Double(c) => $f(&c, Precision::Double, $($arg),*),
        }
    };
}

pub fn gen(g: &Globals, a: GenArgs) -> Result<ExitCode> {
    let mut cfg: ToyGenConfig = read_toml(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_particles {
        cfg.n_particles = n;
    }
    if let Some(t) = a.n_steps {
        cfg.n_steps = t;
    }
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    create_dir(&a.out)?;
    let mut files = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let c = ToyGenConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let traj = generate_trajectory(&c)?;
        let name = format!("traj_{i:04}.rgns");
        write_trajectory(&traj, a.out.join(&name))?;
        files.push(name);
    }
    let manifest = json!({
        "command": "gen",
        "seed": cfg.seed,
        "count": a.count,
        "config": to_json(&cfg)?,
        "files": files,
    });
    write_json(&a.out.join("gen_manifest.json"), &manifest)?;
    println!("wrote {} trajectories", a.count);
    Ok(ExitCode::SUCCESS)
}

pub fn train(g: &Globals, a: TrainArgs) -> Result<ExitCode> {
    let mut cfg: TrainConfig = read_toml(a.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.total_steps = n;
    }
    let mut train_set = load_dir(&a.data)?;
    let val_set = match &a.val {
        Some(dir) => load_dir(dir)?,
        None => {
            if train_set.len() < 2 {
                return Err(Error::InsufficientData(
                    "need at least two trajectories to hold one out for validation".into(),
                ));
            }
            let n_val = (train_set.len() / 10).max(1);
            train_set.split_off(train_set.len() - n_val)
        }
    };
    let mut log = match &a.log {
        Some(p) => Some(BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let sink = log.as_mut().map(|w| w as &mut dyn Write);
    let precision = g.precision.unwrap_or(Precision::Single);
    let summary = match precision {
        Precision::Single => train_save::<f32>(&cfg, &train_set, &val_set, sink, &a.out)?,
        Precision::Double => train_save::<f64>(&cfg, &train_set, &val_set, sink, &a.out)?,
    };
    if let (Some(w), Some(p)) = (log.as_mut(), &a.log) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    println!("{}", serde_json::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?);
    Ok(ExitCode::SUCCESS)
}

fn train_save<T: Real>(
    cfg: &TrainConfig,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    sink: Option<&mut dyn Write>,
    out: &Path,
) -> Result<Value> {
    let outcome = run_training::<T>(cfg, train_set, val_set, sink)?;
    outcome.checkpoint.save(out)?;
    Ok(json!({
        "steps_run": outcome.steps_run,
        "stopped_early": outcome.stopped_early,
        "initial_val": outcome.initial_val,
        "best_val": outcome.best_val,
        "best_step": outcome.checkpoint.step,
        "parameters": outcome.checkpoint.model.param_count(),
    }))
}

pub fn rollout(g: &Globals, a: RolloutArgs, inverse: bool) -> Result<ExitCode> {
    if a.steps == 0 {
        return Err(Error::Config("--steps must be at least 1".into()));
    }
    let traj = read_trajectory(&a.trajectory)?;
    let loaded = load_checkpoint(&a.checkpoint, g.precision)?;
    create_dir(&a.out)?;
    let manifest = with_checkpoint!(loaded, rollout_with(g, &a, &traj, inverse))?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn rollout_with<T: Real>(
    ck: &Checkpoint<T>,
    precision: Precision,
    g: &Globals,
    a: &RolloutArgs,
    traj: &Trajectory,
    inverse: bool,
) -> Result<Value> {
    let model = &ck.model;
    let k = model.config.history;
    let start = a.start.unwrap_or(if inverse { traj.n_steps - 1 } else { k });
    let state = state_from_trajectory(traj, start, k)?;
    let result = if inverse {
        inverse_rollout(model, &state, a.steps)?
    } else {
        simulator::rollout(model, &state, a.steps)?
    };
    write_frames_csv(&result.frames, a.out.join("frames.csv"))?;

    // Position error against ground truth wherever the trajectory has the frame.
    let mut residuals = Vec::with_capacity(a.steps);
    for (s, frame) in result.frames.iter().enumerate().skip(1) {
        let t = frame.time_index;
        let err = if t >= 0 && (t as usize) < traj.n_steps {
            Some(position_mse(&frame.positions, &traj.frame_f64(t as usize))?)
        } else {
            None
        };
        residuals.push((s, t, err));
    }
    let mut csv = String::from("step,time_index,position_mse,codec_residual,wall_stops\n");
    for ((s, t, err), d) in residuals.iter().zip(&result.diagnostics) {
        let e = err.map_or(String::new(), |v| v.to_string());
        csv.push_str(&format!("{s},{t},{e},{},{}\n", d.codec_residual, d.wall_stops));
    }
    let path = a.out.join("residuals.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    let complete = residuals.iter().all(|r| r.2.is_some());
    let mse = complete.then(|| residuals.iter().filter_map(|r| r.2).sum::<f64>() / a.steps as f64);
    if let Some(m) = mse {
        println!("rollout_mse {m:e}");
    }
    Ok(json!({
        "command": if inverse { "invert" } else { "rollout" },
        "globals": globals_json(g, precision),
        "model": to_json(&model.config)?,
        "checkpoint_step": ck.step,
        "start": start,
        "steps": a.steps,
        "rollout_mse": mse,
        "diagnostics": to_json(&result.diagnostics)?,
    }))
}

pub fn goal(g: &Globals, a: GoalArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.mask).map_err(|e| Error::io(&a.mask, e))?;
    let mask = Mask::parse(&text)?;
    let loaded = load_checkpoint(&a.checkpoint, g.precision)?;
    create_dir(&a.out)?;
    let manifest = with_checkpoint!(loaded, goal_with(g, &a, &mask))?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn goal_with<T: Real>(ck: &Checkpoint<T>, precision: Precision, g: &Globals, a: &GoalArgs, mask: &Mask) -> Result<Value> {
    let model = &ck.model;
    let bounds = model.config.bounds()?;
    let target = rasterize_target(mask, &bounds, a.n_max, model.config.history, a.material)?;
    write_frames_csv(std::slice::from_ref(&target), a.out.join("target.csv"))?;
    let res = goal_condition(model, &target, a.steps)?;
    write_frames_csv(std::slice::from_ref(&res.inferred), a.out.join("inferred.csv"))?;
    if let Some(inv) = &res.inverse {
        write_frames_csv(&inv.frames, a.out.join("inverse_frames.csv"))?;
    }
    let reproduced = res.reproduced.as_ref().map_or(std::slice::from_ref(&target), |r| &r.frames[..]);
    write_frames_csv(reproduced, a.out.join("reproduced_frames.csv"))?;
    println!("consistency_mse {:e}", res.consistency_mse);
    Ok(json!({
        "command": "goal",
        "globals": globals_json(g, precision),
        "model": to_json(&model.config)?,
        "checkpoint_step": ck.step,
        "steps": a.steps,
        "n_particles": target.n_particles(),
        "consistency_mse": res.consistency_mse,
        "inverse_diagnostics": res.inverse.as_ref().map(|r| to_json(&r.diagnostics)).transpose()?,
        "forward_diagnostics": res.reproduced.as_ref().map(|r| to_json(&r.diagnostics)).transpose()?,
    }))
}

pub fn eval(g: &Globals, a: EvalArgs) -> Result<ExitCode> {
    let trajectories = load_dir(&a.data)?;
    let loaded = load_checkpoint(&a.checkpoint, g.precision)?;
    let mut cfg = EvalConfig::default();
    if let Some(n) = a.rollout_steps {
        cfg.rollout_steps = n;
    }
    if let Some(ks) = a.consistency_steps.clone() {
        cfg.consistency_steps = ks;
    }
    let report = match &loaded {
        Loaded::Single(c) => evaluate(&c.model, &trajectories, &cfg)?,
        Loaded::Double(c) => evaluate(&c.model, &trajectories, &cfg)?,
    };
    let value = to_json(&report)?;
    match &a.out {
        Some(p) => write_json(p, &value)?,
        None => println!("{}", serde_json::to_string_pretty(&value).map_err(|e| Error::Config(e.to_string()))?),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn selftest(g: &Globals) -> Result<ExitCode> {
    let results = run_selftest(g.seed.unwrap_or(0));
    let mut ok = true;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
