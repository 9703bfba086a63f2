use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgns_core::particles::generate_trajectory;
use rgns_core::simulator::rollout;
use rgns_core::training::{
    make_windows, prepare_sample, sample_loss, sample_refs, train, LossOptions, PreparedSample, SampleRef,
    WindowSample,
};
use rgns_core::{
    Activation, Checkpoint, CodecMode, EdgeMode, LossMode, ModelConfig, ModelParams, Normalizer, StepState,
    ToyGenConfig, TrainConfig, Trajectory,
};

fn toy(n: usize, t: usize, seed: u64) -> Trajectory {
    generate_trajectory(&ToyGenConfig {
        n_particles: n,
        n_steps: t,
        seed,
        ..ToyGenConfig::default()
    })
    .unwrap()
}

#[test]
fn window_count_and_targets() {
    let k = 3;
    let short = toy(4, k + 2, 1);
    let refs = sample_refs(std::slice::from_ref(&short), k);
    assert_eq!(refs, vec![SampleRef { traj: 0, t: k }]);
    assert!(sample_refs(&[toy(4, k + 1, 1)], k).is_empty());

    let trajs = [toy(5, 12, 2), toy(5, 9, 3)];
    let w = make_windows(&trajs, k).unwrap();
    assert_eq!(w.len(), (12 - 1 - k) + (9 - 1 - k));
    for s in &w {
        let tr = &trajs[s.at.traj];
        let (p0, p1, p2) = (tr.frame_f64(s.at.t), tr.frame_f64(s.at.t + 1), tr.frame_f64(s.at.t + 1 - k));
        let before = tr.frame_f64(s.at.t - k);
        for j in 0..p0.len() {
            let next = (p1[j] - p0[j]) / tr.dt;
            let oldest = (p2[j] - before[j]) / tr.dt;
            assert!((s.next_velocity[j] - next).abs() <= 1e-9 * (1.0 + next.abs()));
            assert!((s.oldest_velocity[j] - oldest).abs() <= 1e-9 * (1.0 + oldest.abs()));
            assert_eq!(s.state.positions[j], p0[j]);
        }
    }
}

fn tiny(codec: CodecMode, edge_mode: EdgeMode, seed: u64) -> (ModelParams<f64>, PreparedSample<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        history: 2,
        latent: 10,
        hidden: 6,
        hidden_layers: 1,
        n_layers: 2,
        radius: 0.45,
        codec,
        edge_mode,
        activation: Activation::Tanh,
        residual_scale: 1.0,
        ..ModelConfig::default()
    };
    let norm = Normalizer {
        mean: vec![0.05, 0.1],
        std: vec![0.9, 1.1],
    };
    let model = ModelParams::<f64>::init(cfg, norm, &mut rng).unwrap();
    let n = 4;
    let mut pts = |lo: f64, hi: f64| -> Vec<f64> { (0..2 * n).map(|_| rng.random_range(lo..hi)).collect() };
    let state = StepState {
        dims: 2,
        positions: pts(0.2, 0.8),
        window: vec![pts(-1.0, 1.0), pts(-1.0, 1.0)],
        materials: vec![0; n],
        time_index: 2,
    };
    let sample = WindowSample {
        at: SampleRef { traj: 0, t: 2 },
        next_velocity: pts(-1.0, 1.0),
        oldest_velocity: pts(-1.0, 1.0),
        state,
    };
    let prep = prepare_sample(&model, &sample, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (model, prep)
}

fn worst_gradient_error(model: &ModelParams<f64>, prep: &PreparedSample<f64>) -> f64 {
    let opts = LossOptions::default();
    let grads = sample_loss(model, prep, &opts, true).unwrap().1.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (ti, (_, g)) in grads.named_tensors().iter().enumerate() {
        for j in 0..g.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut()[ti][j] += delta;
                sample_loss(&m, prep, &opts, false).unwrap().0.total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8));
        }
    }
    worst
}

#[test]
fn updated_edge_gradients_match_finite_differences() {
    let (model, prep) = tiny(CodecMode::Ilp, EdgeMode::Updated, 21);
    let worst = worst_gradient_error(&model, &prep);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn mlp_codec_gradients_match_finite_differences() {
    let (model, prep) = tiny(CodecMode::Mlp, EdgeMode::Fixed, 22);
    let worst = worst_gradient_error(&model, &prep);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn both_directions_share_one_registry() {
    let (model, prep) = tiny(CodecMode::Ilp, EdgeMode::Fixed, 23);
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.iter().collect::<HashSet<_>>().len(), names.len());
    assert_eq!(names.len(), model.clone().tensors_mut().len());

    let grad = |mode| {
        let opts = LossOptions {
            mode,
            ..LossOptions::default()
        };
        sample_loss(&model, &prep, &opts, true).unwrap().1.unwrap()
    };
    let fwd = grad(LossMode::ForwardOnly);
    let both = grad(LossMode::Bidirectional);
    let fwd_names: Vec<String> = fwd.named_tensors().into_iter().map(|(n, _)| n).collect();
    assert_eq!(fwd_names, names);
    // every tensor receives gradient from the inverse term too
    for ((name, a), (_, b)) in fwd.named_tensors().iter().zip(both.named_tensors()) {
        let differs = a.iter().zip(b).any(|(x, y)| x != y);
        assert!(differs, "{name} gets no inverse-term gradient");
    }
}

fn quick_config(steps: u64) -> TrainConfig {
    TrainConfig {
        history: 2,
        latent: 16,
        hidden: 16,
        hidden_layers: 1,
        n_layers: 2,
        lr0: 3e-3,
        total_steps: steps,
        batch_size: 2,
        eval_every: 50,
        val_samples: 16,
        log_every: 50,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_keeps_initial_model() {
    let data = [toy(20, 30, 1)];
    let out = train::<f64>(&quick_config(0), &data, &[], None).unwrap();
    assert_eq!(out.steps_run, 0);
    assert_eq!(out.checkpoint.step, 0);
    assert_eq!(out.best_val, out.initial_val);
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let data = [toy(30, 60, 1), toy(30, 60, 2)];
    let val = [toy(30, 60, 3)];
    let cfg = quick_config(200);
    let mut log = Vec::new();
    let a = train::<f64>(&cfg, &data, &val, Some(&mut log)).unwrap();
    let b = train::<f64>(&cfg, &data, &val, None).unwrap();
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert!(a.best_val < a.initial_val, "{} -> {}", a.initial_val, a.best_val);
    let lines = String::from_utf8(log).unwrap();
    assert_eq!(lines.lines().count(), a.log.len());
}

#[test]
fn checkpoint_file_roundtrip_preserves_rollouts() {
    let data = [toy(20, 30, 4)];
    let out = train::<f32>(&quick_config(10), &data, &[], None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    let s = rgns_core::particles::state_from_trajectory(&data[0], 5, 2).unwrap();
    let r0 = rollout(&out.checkpoint.model, &s, 4).unwrap();
    let r1 = rollout(&back.model, &s, 4).unwrap();
    assert_eq!(r0.frames, r1.frames);
}
