use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgns_core::graph::build_radius_graph;
use rgns_core::rrmp::EdgeLatents;
use rgns_core::simulator::{forward_step, goal_condition, inverse_step, rollout};
use rgns_core::{
    Activation, EdgeMode, LatentNodes, Matrix, ModelConfig, ModelParams, Normalizer, RadiusGraph, RrmpStack, StepState,
};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn latents(n: usize, e: usize, half: usize, rng: &mut ChaCha8Rng) -> (LatentNodes<f64>, EdgeLatents<f64>) {
    (
        LatentNodes {
            n1: random_matrix(n, half, rng),
            n2: random_matrix(n, half, rng),
        },
        EdgeLatents {
            e1: random_matrix(e, half, rng),
            e2: random_matrix(e, half, rng),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn stack_inverse_undoes_forward(seed in any::<u64>(), n in 1usize..30, m in 1usize..5, updated in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let graph = build_radius_graph(&pos, 2, 0.3).unwrap();
        let mode = if updated { EdgeMode::Updated } else { EdgeMode::Fixed };
        let stack = RrmpStack::<f64>::init(m, 12, 16, 2, Activation::Relu, 0.1, mode, &mut rng).unwrap();
        let (nodes, edges) = latents(n, graph.n_edges(), 6, &mut rng);
        let (out, out_e) = stack.forward(&nodes, &edges, &graph).unwrap();
        let (back, back_e) = stack.inverse(&out, &out_e, &graph).unwrap();
        prop_assert!(back.max_abs_diff(&nodes) <= 1e-11);
        prop_assert!(back_e.max_abs_diff(&edges) <= 1e-11);
    }
}

fn sum_rows(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    out
}

#[test]
fn single_layer_matches_hand_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 3;
    // node 2 has no neighbours
    let graph = RadiusGraph::from_edges(3, vec![(0, 1), (1, 0)]).unwrap();
    let stack = RrmpStack::<f64>::init(1, 2 * h, 5, 1, Activation::Tanh, 1.0, EdgeMode::Fixed, &mut rng).unwrap();
    let (nodes, edges) = latents(3, 2, h, &mut rng);
    let (out, _) = stack.forward(&nodes, &edges, &graph).unwrap();

    let layer = &stack.layers[0];
    let eval = |net: &rgns_core::MlpParams<f64>, x: Vec<f64>| -> Vec<f64> {
        let w = x.len();
        net.eval(&Matrix::from_vec(1, w, x).unwrap()).unwrap().row(0).to_vec()
    };
    let msgs = |net, x: &dyn Fn(usize) -> Vec<f64>, e: &Matrix<f64>, i: usize| -> Vec<f64> {
        let rows: Vec<Vec<f64>> = graph
            .edges
            .iter()
            .enumerate()
            .filter(|(_, &(r, _))| r == i)
            .map(|(k, &(r, s))| eval(net, [x(r), x(s), e.row(k).to_vec()].concat()))
            .collect();
        sum_rows(&rows, h)
    };
    let n2 = |i: usize| nodes.n2.row(i).to_vec();
    let mut n1_new = Vec::new();
    for i in 0..3 {
        let agg = msgs(&layer.f_edge, &n2, &edges.e2, i);
        let res = eval(&layer.f_node, [n2(i), agg].concat());
        let row: Vec<f64> = nodes.n1.row(i).iter().zip(&res).map(|(a, b)| a + b).collect();
        n1_new.push(row);
    }
    let n1f = |i: usize| n1_new[i].clone();
    for i in 0..3 {
        let agg = msgs(&layer.g_edge, &n1f, &edges.e1, i);
        let res = eval(&layer.g_node, [n1f(i), agg].concat());
        for a in 0..h {
            assert!((out.n1.row(i)[a] - n1_new[i][a]).abs() < 1e-14);
            assert!((out.n2.row(i)[a] - (nodes.n2.row(i)[a] + res[a])).abs() < 1e-14);
        }
    }
}

#[test]
fn stack_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 40;
    let pos: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
    let graph = build_radius_graph(&pos, 2, 0.25).unwrap();
    let stack = RrmpStack::<f64>::init(3, 8, 8, 2, Activation::Relu, 0.1, EdgeMode::Fixed, &mut rng).unwrap();
    let (nodes, edges) = latents(n, graph.n_edges(), 4, &mut rng);
    let (out, _) = stack.forward(&nodes, &edges, &graph).unwrap();

    let perm: Vec<usize> = (0..n).rev().collect();
    let mut inv = vec![0; n];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let moved: Vec<f64> = perm.iter().flat_map(|&p| pos[2 * p..2 * p + 2].to_vec()).collect();
    let g2 = build_radius_graph(&moved, 2, 0.25).unwrap();
    let row_perm = |m: &Matrix<f64>| Matrix::from_fn(n, m.cols(), |i, j| m.row(perm[i])[j]);
    let edge_perm = |m: &Matrix<f64>| {
        Matrix::from_fn(g2.n_edges(), m.cols(), |k, j| {
            let (a, b) = g2.edges[k];
            let orig = graph.edges.iter().position(|&e| e == (perm[a], perm[b])).unwrap();
            m.row(orig)[j]
        })
    };
    let nodes2 = LatentNodes {
        n1: row_perm(&nodes.n1),
        n2: row_perm(&nodes.n2),
    };
    let edges2 = EdgeLatents {
        e1: edge_perm(&edges.e1),
        e2: edge_perm(&edges.e2),
    };
    let (out2, _) = stack.forward(&nodes2, &edges2, &g2).unwrap();
    for i in 0..n {
        for (a, b) in out2.n1.row(inv[perm[i]]).iter().zip(out.n1.row(perm[i])) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in out2.n2.row(i).iter().zip(out.n2.row(perm[i])) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn small_model(seed: u64) -> ModelParams<f64> {
    let cfg = ModelConfig {
        latent: 24,
        hidden: 16,
        n_layers: 3,
        radius: 0.1,
        ..ModelConfig::default()
    };
    let norm = Normalizer {
        mean: vec![0.0, -0.1],
        std: vec![0.5, 0.6],
    };
    ModelParams::init(cfg, norm, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_state(n: usize, k: usize, seed: u64) -> StepState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StepState {
        dims: 2,
        positions: (0..2 * n).map(|_| rng.random_range(0.2..0.8)).collect(),
        window: (0..k).map(|_| (0..2 * n).map(|_| rng.random_range(-0.5..0.5)).collect()).collect(),
        materials: vec![0; n],
        time_index: 10,
    }
}

#[test]
fn one_step_rollout_is_one_forward_step() {
    let model = small_model(3);
    let s = random_state(30, 5, 4);
    let r = rollout(&model, &s, 1).unwrap();
    assert_eq!(r.frames.len(), 2);
    assert_eq!(r.last(), &forward_step(&model, &s).unwrap());
}

#[test]
fn only_the_predicted_slot_changes() {
    let model = small_model(5);
    let s = random_state(25, 5, 6);
    let f = forward_step(&model, &s).unwrap();
    let snapped = rollout(&model, &s, 1).unwrap().frames[0].clone();
    assert_eq!(&f.window[..4], &snapped.window[1..]);
    assert_eq!(f.time_index, s.time_index + 1);
    let b = inverse_step(&model, &snapped).unwrap();
    assert_eq!(&b.window[1..], &snapped.window[..4]);
    assert_eq!(b.time_index, s.time_index - 1);
}

#[test]
fn isolated_particle_ignores_distant_ones() {
    let model = small_model(7);
    let lone = random_state(1, 5, 8);
    let mut crowd = random_state(6, 5, 9);
    // move the other particles out of range of particle 0
    crowd.positions[0] = 0.1;
    crowd.positions[1] = 0.1;
    for i in 1..6 {
        crowd.positions[2 * i] = 0.6 + 0.05 * i as f64;
        crowd.positions[2 * i + 1] = 0.8;
    }
    let mut alone = lone.clone();
    alone.positions = vec![0.1, 0.1];
    for (w, wl) in crowd.window.iter_mut().zip(&alone.window) {
        w[..2].copy_from_slice(wl);
    }
    let a = forward_step(&model, &alone).unwrap();
    let c = forward_step(&model, &crowd).unwrap();
    assert_eq!(&c.positions[..2], &a.positions[..]);
    assert_eq!(&c.newest()[..2], a.newest());
}

#[test]
fn thread_count_does_not_change_rollouts() {
    let model = small_model(10);
    let s = random_state(80, 5, 11);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rollout(&model, &s, 5).unwrap())
    };
    assert_eq!(run(1).frames, run(4).frames);
}

#[test]
fn goal_with_zero_steps_returns_target() {
    let model = small_model(12);
    let target = StepState::at_rest(2, vec![0.25, 0.5, 0.75, 0.5], vec![0, 0], 5, 0);
    let g = goal_condition(&model, &target, 0).unwrap();
    assert_eq!(g.inferred, target);
    assert_eq!(g.consistency_mse, 0.0);
    assert!(g.inverse.is_none() && g.reproduced.is_none());
}

#[test]
fn identity_model_moves_at_constant_velocity() {
    let cfg = ModelConfig {
        latent: 32,
        hidden: 8,
        n_layers: 2,
        ..ModelConfig::default()
    };
    let dt = cfg.dt;
    let q = cfg.lattice().unwrap().quantum();
    let norm = Normalizer {
        mean: vec![0.0, 0.0],
        std: vec![1.0, 1.0],
    };
    let model = ModelParams::<f64>::identity(cfg, norm).unwrap();
    let v = vec![4.0, -2.0, 0.0, 8.0];
    let s = StepState {
        dims: 2,
        positions: vec![0.25, 0.5, 0.5, 0.25],
        window: vec![v.clone(); 5],
        materials: vec![0, 0],
        time_index: 0,
    };
    let r = rollout(&model, &s, 3).unwrap();
    for (t, frame) in r.frames.iter().enumerate() {
        for (j, x) in frame.positions.iter().enumerate() {
            let expect = s.positions[j] + t as f64 * v[j] * dt;
            assert!((x - expect).abs() <= (t as f64 + 1.0) * q, "t={t} j={j}: {x} vs {expect}");
        }
        // velocities are quantised to the position lattice
        for (a, b) in frame.newest().iter().zip(&v) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
