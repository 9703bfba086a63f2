use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgns_core::eval::{mmd, ot_distance, rasterize_target, rollout_mse, sinkhorn, cost_matrix, Mask, MmdEstimator};
use rgns_core::particles::{
    compute_velocities, decode_trajectory, encode_trajectory, generate_trajectory, state_from_trajectory, total_energy,
};
use rgns_core::{Bounds, RolloutDirection, RolloutResult, ToyGenConfig, Trajectory};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn ot_six_points_equals_all_720_matchings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let perms = permutations(6);
    assert_eq!(perms.len(), 720);
    for _ in 0..30 {
        let a: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let best = perms
            .iter()
            .map(|p| {
                let mut s = 0.0;
                for (i, &j) in p.iter().enumerate() {
                    s += (a[2 * i] - b[2 * j]).powi(2) + (a[2 * i + 1] - b[2 * j + 1]).powi(2);
                }
                s / 6.0
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(ot_distance(&a, &b, 2).unwrap(), best);
    }
}

#[test]
fn two_point_crossing() {
    let a = [0.0, 0.0, 1.0, 1.0];
    let b = [1.0, 1.0, 0.0, 0.1];
    let straight = ((1.0f64 + 1.0) + (1.0 + 0.81)) / 2.0;
    let crossed = (0.01f64 + 0.0) / 2.0;
    let got = ot_distance(&a, &b, 2).unwrap();
    assert!((got - straight.min(crossed)).abs() < 1e-15);
}

#[test]
fn sinkhorn_upper_bounds_exact_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
    let exact = ot_distance(&a, &b, 2).unwrap();
    let approx = sinkhorn(&cost_matrix(&a, &b, 2), 30, 1e-3, 1000);
    assert!(approx >= exact - 1e-6 && approx - exact < 5e-3, "{approx} vs {exact}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd_translation_invariant(
        a in prop::collection::vec(-1.0f64..1.0, 4..40),
        b in prop::collection::vec(-1.0f64..1.0, 4..40),
        shift in prop::array::uniform2(-3.0f64..3.0),
    ) {
        let a = &a[..a.len() / 2 * 2];
        let b = &b[..b.len() / 2 * 2];
        let move_by = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| v + shift[i % 2]).collect() };
        for est in [MmdEstimator::Unbiased, MmdEstimator::Biased] {
            let m0 = mmd(a, b, 2, Some(0.4), est).unwrap();
            let m1 = mmd(&move_by(a), &move_by(b), 2, Some(0.4), est).unwrap();
            prop_assert!((m0 - m1).abs() <= 1e-12);
        }
        prop_assert!(mmd(a, b, 2, None, MmdEstimator::Biased).unwrap() >= -1e-15);
    }

    #[test]
    fn format_roundtrip(seed in any::<u64>(), n in 1usize..30, t in 1usize..20) {
        let traj = generate_trajectory(&ToyGenConfig { n_particles: n, n_steps: t, seed, ..ToyGenConfig::default() }).unwrap();
        prop_assert_eq!(decode_trajectory(&encode_trajectory(&traj)).unwrap(), traj);
    }

    #[test]
    fn window_indices_follow_differencing(seed in any::<u64>(), k in 1usize..5) {
        let traj = generate_trajectory(&ToyGenConfig { n_particles: 6, n_steps: 12, seed, ..ToyGenConfig::default() }).unwrap();
        let vel = compute_velocities(&traj).unwrap();
        for t in k..traj.n_steps {
            let s = state_from_trajectory(&traj, t, k).unwrap();
            for (slot, frame) in s.window.iter().enumerate() {
                // slot 0 is v^{t-k+1}
                let time = t + 1 - k + slot;
                let p1 = traj.frame(time);
                let p0 = traj.frame(time - 1);
                for j in 0..frame.len() {
                    let oracle = (p1[j] as f64 - p0[j] as f64) / traj.dt;
                    prop_assert!((frame[j] - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
                    prop_assert_eq!(vel[time - 1][j], oracle);
                }
            }
        }
    }
}

#[test]
fn mmd_identical_multisets_and_offsets() {
    let a = [0.1, 0.2, 0.5, 0.7, 0.9, 0.4];
    let shuffled = [0.9, 0.4, 0.1, 0.2, 0.5, 0.7];
    assert!(mmd(&a, &shuffled, 2, None, MmdEstimator::Biased).unwrap().abs() < 1e-12);
    assert!(mmd(&a, &[0.1, 0.2], 2, None, MmdEstimator::Unbiased).is_err());
}

#[test]
fn rollout_mse_constant_offset() {
    let traj = generate_trajectory(&ToyGenConfig {
        n_particles: 10,
        n_steps: 20,
        seed: 3,
        ..ToyGenConfig::default()
    })
    .unwrap();
    let c = 0.125;
    let frames = (0..=5)
        .map(|s| {
            let mut st = state_from_trajectory(&traj, 4, 2).unwrap();
            st.positions = traj.frame_f64(4 + s).iter().map(|x| x + c).collect();
            st
        })
        .collect();
    let pred = RolloutResult {
        direction: RolloutDirection::Forward,
        frames,
        diagnostics: Vec::new(),
    };
    assert_eq!(rollout_mse(&pred, &traj, 4).unwrap(), c * c);
    assert!(rollout_mse(&pred, &traj, 15).is_err());
}

#[test]
fn l_mask_particles_sit_on_cell_centres() {
    let text = "#..\n#..\n###\n";
    let mask = Mask::parse(text).unwrap();
    let s = rasterize_target(&mask, &Bounds::unit(2), 100, 3, 0).unwrap();
    assert_eq!(s.n_particles(), 5);
    let third = 1.0 / 3.0;
    let expect = [
        (0.5 * third, 1.0 - 0.5 * third),
        (0.5 * third, 1.0 - 1.5 * third),
        (0.5 * third, 1.0 - 2.5 * third),
        (1.5 * third, 1.0 - 2.5 * third),
        (2.5 * third, 1.0 - 2.5 * third),
    ];
    for (i, (x, y)) in expect.iter().enumerate() {
        assert!((s.positions[2 * i] - x).abs() < 1e-12 && (s.positions[2 * i + 1] - y).abs() < 1e-12);
    }
    assert_eq!(s.history(), 3);
}

fn energies(cfg: &ToyGenConfig, traj: &Trajectory) -> Vec<f64> {
    let vel = compute_velocities(traj).unwrap();
    (1..traj.n_steps)
        .map(|t| total_energy(cfg, &traj.frame_f64(t), &vel[t - 1]))
        .collect()
}

#[test]
fn toy_dynamics_dissipate_energy() {
    let cfg = ToyGenConfig {
        n_particles: 60,
        n_steps: 200,
        seed: 4,
        ..ToyGenConfig::default()
    };
    let traj = generate_trajectory(&cfg).unwrap();
    let e = energies(&cfg, &traj);
    let first = e[..10].iter().sum::<f64>() / 10.0;
    let last = e[e.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(last < first, "{first} -> {last}");
    let b = cfg.bounds().unwrap();
    for t in 0..traj.n_steps {
        for (j, x) in traj.frame_f64(t).iter().enumerate() {
            assert!(*x >= b.lo[j % 2] && *x <= b.hi[j % 2]);
        }
    }
}
